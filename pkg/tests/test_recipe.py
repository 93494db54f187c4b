import sys

import pytest
from hypothesis import given, settings, strategies as st

from snapfs.errors import MalformedData
from snapfs.recipe import (
    ABSENT, MISMATCH, UNAVAILABLE, BuildRecipe, capture_recipe, check_recipe,
    filter_environment, run_probe,
)

ENV = {"CC": "gcc", "CFLAGS": "-O2 -g", "LANG": "C", "SECRET_TOKEN": "x", "CMS_PATH": "/cvmfs"}
TOOLS = {"gcc --version": "gcc (GCC) 13.2.0", "cmake --version": "cmake version 3.27.1"}


def fake_runner(table):
    return lambda cmd: table.get(cmd)


def test_filter_environment_globs():
    assert filter_environment(ENV, ["C*"]) == {"CC": "gcc", "CFLAGS": "-O2 -g",
                                               "CMS_PATH": "/cvmfs"}
    assert filter_environment(ENV, ["LANG", "CC"]) == {"LANG": "C", "CC": "gcc"}
    assert filter_environment(ENV, []) == {}


def test_capture_is_deterministic():
    kwargs = dict(actions=["cmake ..", "make -j8"], probes=list(TOOLS) + ["missing-tool -v"],
                  env_allowlist=["C*", "LANG"], environ=ENV, runner=fake_runner(TOOLS),
                  created_at=1700000000)
    a = capture_recipe(**kwargs)
    b = capture_recipe(**{**kwargs, "environ": dict(reversed(list(ENV.items())))})
    assert a == b and a.serialize() == b.serialize()
    assert dict(a.tools)["missing-tool -v"] == UNAVAILABLE
    assert "SECRET_TOKEN" not in a.env
    assert a.actions == ("cmake ..", "make -j8")


def test_format():
    r = BuildRecipe(environment=(("B", "2 3"), ("A", "1")), tools=(("gcc -v", "13"),),
                    actions=("make all",), inputs=(("tree", "a" * 64),), created_at=5)
    assert r.serialize().decode() == (
        "snapfs-recipe 1\ncreated 5\nenv A 1\nenv B 2\\s3\ntool gcc\\s-v 13\n"
        f"action make\\sall\ninput tree {'a' * 64}\n")
    assert BuildRecipe.parse(r.serialize()) == r
    for bad in [b"", b"snapfs-recipe 1\n", b"snapfs-recipe 1\ncreated 5\nbogus x\n",
                b"snapfs-recipe 1\ncreated 5\nenv B 1\nenv A 1\n"]:
        with pytest.raises(MalformedData):
            BuildRecipe.parse(bad)


text = st.text(max_size=15)


@given(st.dictionaries(text.filter(bool), text, max_size=5),
       st.lists(st.tuples(text, text), max_size=4), st.lists(text, max_size=4))
@settings(max_examples=100, deadline=None)
def test_roundtrip_property(env, tools, actions):
    r = BuildRecipe(tuple(env.items()), tuple(tools), tuple(actions), created_at=1)
    assert BuildRecipe.parse(r.serialize()) == r


def test_check_statuses():
    recipe = capture_recipe(probes=list(TOOLS) + ["gone"], env_allowlist=["CC", "LANG"],
                            environ=ENV, runner=fake_runner(TOOLS), created_at=0)
    ok = check_recipe(recipe, ENV, fake_runner(TOOLS))
    assert ok.ok and not ok.problems()
    drifted_env = {"CC": "clang"}
    drifted_tools = {"gcc --version": "gcc (GCC) 14.1.0", "gone": "now here"}
    check = check_recipe(recipe, drifted_env, fake_runner(drifted_tools))
    got = {(r.field, r.key): r.status for r in check.results}
    assert got == {
        ("env", "CC"): MISMATCH,
        ("env", "LANG"): ABSENT,
        ("tool", "gcc --version"): MISMATCH,
        ("tool", "cmake --version"): ABSENT,
        ("tool", "gone"): MISMATCH,
    }
    assert not check.ok
    assert check.to_text().splitlines()[0].startswith(("match", "mismatch", "absent"))


def test_run_probe_real_commands():
    assert run_probe(f"{sys.executable} --version").startswith("Python 3")
    assert run_probe("definitely-not-a-command-xyz --version") is None
    assert run_probe(f"{sys.executable} -c 'import sys; sys.exit(3)'") is None
