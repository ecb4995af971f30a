"""Smoke test for the lsi_workbench extension module."""

import math
import sys
import tempfile

import lsi_workbench as lw


def main():
    margins = lw.hypotheses("")
    assert all(ok for ok, _ in margins.values()), margins
    assert not lw.hypotheses("s = 4")["H1.5"][0]

    a, b = lw.assemble_constants(1.0, 1.0, 0.5)
    assert math.isclose(a, 4 / 3) and math.isclose(b, 14 / 3), (a, b)
    try:
        lw.assemble_constants(1.0, 1.0, 1.5)
    except RuntimeError:
        pass
    else:
        raise AssertionError("C2 >= 1 must be rejected")

    c_ls, c_sg = lw.estimate_ls("[run]\nomega_points = 3\nnodes_per_site = 64\n")
    assert 0 < c_sg <= c_ls, (c_ls, c_sg)

    with tempfile.TemporaryDirectory() as out:
        assert lw.run(["region", "--out", out]) == 0
        assert lw.run(["ubound", "--config", out + "/missing.toml"]) == 2
    print(f"ok: c_LS={c_ls:.4f} c_SG={c_sg:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
