"""Sampling the domination and monotonicity conditions.

The built-in family is monotone in the standard orientation.  Negating all
of its maps produces a family that is monotone in the flipped orientation
only; the sampled check sees both facts.  A small worst slack in the
standard check shows how close the family sits to the boundary.
"""

from fbsde_tree import TreeTopology, check_conditions, make_monotone_family, negate

topo = TreeTopology(4)
coeffs, dom = make_monotone_family(topo, 2, gain=0.1, seed=7)

for label, c, orientation in (("family, standard", coeffs, "standard"),
                              ("negated, standard", negate(coeffs), "standard"),
                              ("negated, flipped", negate(coeffs), "flipped")):
    rep = check_conditions(c, dom, 10_000, seed=0, orientation=orientation)
    worst = min(rep.worst_slack.values())
    print(f"{label:20s} passed={rep.passed!s:5s} violations={rep.total_violations:6d} "
          f"worst slack={worst: .3e}")
