"""Smoke test for the bundle_menu extension module.

Run after building the extension, e.g. `maturin develop -m crates/python/Cargo.toml`,
or with the compiled library copied onto PYTHONPATH as bundle_menu.so.
"""

import json

import bundle_menu as bm


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    m = bm.Model.fixture("f4_tree3")
    assert m.n == 3 and m.form == "parametric"
    assert m.endpoints("1,2,3") == (1.0, 7.0)

    sol = bm.solve(m)
    assert sol.kept == ["1", "1,2", "1,3", "1,2,3"], sol.kept
    label = sol.classify()
    assert label["label"] == "tree" and label["root"] == "1"

    sched = bm.price(m, sol)
    for key, want in {"1": 4.5, "1,2": 29 / 6, "1,3": 5.0, "1,2,3": 5.5}.items():
        assert close(sched.prices[key], want), (key, sched.prices[key])
    for got, want in zip(sched.breakpoints, [1 / 3, 5 / 9, 9 / 13]):
        assert close(got, want, 1e-10)
    assert bm.verify(m, sched)["holds"] is True
    env, pay = bm.revenue(m, sched)
    assert close(env, pay, 1e-7)

    assert bm.check(m, "full_tree")["holds"] is True
    assert bm.oracle(m, sol, 2001)["report"]["holds"] is True

    # round trip through JSON text and dicts
    doc = m.to_json()
    again = bm.Model.from_json(json.dumps(doc))
    assert bm.solve(again).kept == sol.kept
    reloaded = bm.MenuSolution.from_json(sol.to_json(), 3)
    assert reloaded.kept == sol.kept

    menu, report = bm.additive_menu(bm.Model.fixture("additive_demo"))
    assert menu == ["", "3", "2,3", "1,2,3"] and report["holds"] is True

    try:
        bm.solve(bm.Model.fixture("e6"))
    except bm.RefusedError as err:
        assert json.loads(err.args[1])["name"] == "scd_star"
    else:
        raise AssertionError("e6 should be refused")
    assert bm.solve(bm.Model.fixture("e6"), force=True).forced

    try:
        bm.Model.from_json({"n": 2, "g1": {"1": 1.0}})
    except ValueError:
        pass
    else:
        raise AssertionError("incomplete model accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
