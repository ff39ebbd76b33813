"""Brute-force counterfactual enumeration for the simulation mechanism.

Written from the structural equations alone (nothing from medshift.law), so it
can serve as an independent check of the oracle functionals. Each
counterfactual mean is an explicit sum over the exogenous Bernoulli draws:

    theta1(delta) = E[Y(A_delta, L(A_delta), G_delta)]
    theta2(delta) = E[Y(A_delta, L(A_delta), G)]

where G_delta is an independent draw from the law of Z(A_delta) given
(A_delta, W) and G an independent draw from the natural law of Z given W.
Neither draw shares its L with the L(A_delta) that enters Y.

Run as a script to print the golden constants frozen in the tests.
"""

import itertools
import math

LO, HI = 0.001, 0.999


def expit_printed(x):
    # the mechanism's expit is 1 / (1 + e^x); x = +inf gives 0
    if x == math.inf:
        return 0.0
    return 1.0 / (1.0 + math.exp(x))


def clamp(p):
    return min(max(p, LO), HI)


def bern(p, x):
    return p if x == 1 else 1.0 - p


def p_w(w1, w2, w3):
    pw3 = clamp(0.2 + (w1 + w2) / 3.0)
    return bern(clamp(0.6), w1) * bern(clamp(0.3), w2) * bern(pw3, w3)


def p_a1(w1, w2, w3):
    s = w1 + w2 + w3
    x = math.inf if s == 0 else 2.0 + 5.0 / s
    return clamp(expit_printed(x))


def p_l1(a, w1, w2, w3):
    return clamp(expit_printed((w1 + w2 + w3) / 3.0 - a - math.log(2.0) + 0.2))


def p_z1(l, a, w1, w2, w3):
    return clamp(expit_printed(math.log(3.0) * (w1 + w2) + a - l))


def p_y1(z, l, a, w1, w2, w3):
    return clamp(expit_printed(1.0 - 3.0 * (3.0 - l - 3.0 * a + z) / (2.0 + w1 + w2 + w3)))


def tilted_a1(g1, kind, delta):
    if kind == "identity":
        return g1
    if kind == "odds":
        return delta * g1 / (delta * g1 + 1.0 - g1)
    if kind == "exp":
        return math.exp(delta) * g1 / (math.exp(delta) * g1 + 1.0 - g1)
    raise ValueError(kind)


def natural_mean_y():
    """E[Y] with every variable at its natural value (not theta1 at the identity)."""
    tot = 0.0
    for w in itertools.product((0, 1), repeat=3):
        for a, l, z in itertools.product((0, 1), repeat=3):
            tot += (p_w(*w) * bern(p_a1(*w), a) * bern(p_l1(a, *w), l) * bern(p_z1(l, a, *w), z)
                    * p_y1(z, l, a, *w))
    return tot


def counterfactual_means(kind="identity", delta=1.0):
    """(theta1, theta2) by summing over W, the intervened A, and the downstream draws."""
    t1 = t2 = 0.0
    for w in itertools.product((0, 1), repeat=3):
        pw = p_w(*w)
        g1 = p_a1(*w)
        gd1 = tilted_a1(g1, kind, delta)
        # natural mediator draw G given W: marginalize the natural A, L, Z
        pG = {z: sum(bern(g1, a) * bern(p_l1(a, *w), l) * bern(p_z1(l, a, *w), z)
                     for a in (0, 1) for l in (0, 1)) for z in (0, 1)}
        for a in (0, 1):
            pa = bern(gd1, a)
            # G_delta: Z(a) given (a, W) with its own draw of L(a)
            pGd = {z: sum(bern(p_l1(a, *w), l) * bern(p_z1(l, a, *w), z) for l in (0, 1)) for z in (0, 1)}
            for l in (0, 1):
                pl = bern(p_l1(a, *w), l)
                for z in (0, 1):
                    y1 = p_y1(z, l, a, *w)
                    t1 += pw * pa * pl * pGd[z] * y1
                    t2 += pw * pa * pl * pG[z] * y1
    return t1, t2


if __name__ == "__main__":
    base = counterfactual_means()[0]
    print(f"E[Y] = {natural_mean_y()!r}")
    print(f"theta1_null = {base!r}")
    for kind, delta in (("odds", 2.0), ("odds", 0.5), ("odds", 5.0), ("exp", 1.0), ("exp", -1.0)):
        t1, t2 = counterfactual_means(kind, delta)
        print(f"{kind} {delta}: theta1 = {t1!r} theta2 = {t2!r} psi_d = {base - t2!r} psi_i = {t2 - t1!r}")


# generic laws -------------------------------------------------------------------


def theta_loops(pmf, post, j):
    """theta_j for a joint pmf of shape (nW, nA, 2, nZ, 2) by plain loops.

    ``post(g_row)`` maps the treatment pmf of one W stratum to its
    post-intervention pmf.
    """
    nW, nA, _, nZ, _ = pmf.shape
    tot = 0.0
    for w in range(nW):
        pw = pmf[w].sum()
        if pw.real == 0:
            continue
        g = [pmf[w, a].sum() / pw for a in range(nA)]
        gd = post(g)
        hz = [pmf[w, :, :, z, :].sum() / pw for z in range(nZ)]
        for a in range(nA):
            pa = pmf[w, a].sum()
            if gd[a].real == 0:
                continue
            for l in range(2):
                pl = pmf[w, a, l].sum() / pa
                for z in range(nZ):
                    pz = pmf[w, a, :, z, :].sum() / pa if j == 1 else hz[z]
                    cell = pmf[w, a, l, z].sum()
                    m = pmf[w, a, l, z, 1] / cell
                    tot += pw * gd[a] * pl * pz * m
    return tot


def influence_numeric(pmf, post, j, h=1e-30):
    """Influence function at every state: the derivative of theta along
    (1 - t) P + t * point mass at t = 0, by the complex-step method (no
    subtractive cancellation, so exact to rounding even in tiny strata).
    Flattened in lexicographic state order."""
    flat = pmf.ravel().astype(complex)
    out = []
    for k in range(flat.size):
        q = (1.0 - 1j * h) * flat
        q[k] += 1j * h
        out.append(theta_loops(q.reshape(pmf.shape), post, j).imag / h)
    return out


def odds_post(delta):
    def post(g):
        t = delta * g[1] / (delta * g[1] + 1.0 - g[1])
        return [1.0 - t, t]
    return post


def exp_post(delta):
    def post(g):
        w = [gi * math.exp(delta * a) for a, gi in enumerate(g)]  # complex-safe
        s = sum(w)
        return [x / s for x in w]
    return post


def shift_post(steps):
    """Pushforward of g under a -> a - steps for levels above lowest + steps."""
    def post(g):
        low = next(a for a, gi in enumerate(g) if gi.real > 1e-12)
        out = [0.0] * len(g)
        for a, gi in enumerate(g):
            out[a - steps if a > low + steps else a] += gi
        return out
    return post


def identity_post(g):
    return list(g)
