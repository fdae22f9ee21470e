"""Flat-array MCMC kernels for the hard/soft tree ensembles.

Trees live in fixed-capacity heap arrays (children of node i at 2i+1, 2i+2)
so the whole backfitting sweep stays inside one jitted function. The hard
and soft code paths consume random draws in the same order, which makes the
soft sampler with a pinned tiny bandwidth reproduce the hard sampler draw
for draw (used by the limit tests).

Status codes: 0 = absent, 1 = internal, 2 = leaf.
"""

import math

import numpy as np
from numba import njit

STATUS_NONE = 0
STATUS_INTERNAL = 1
STATUS_LEAF = 2

_SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def ndtr(x):
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True)
def ndtri(p):
    """Inverse standard normal CDF (Wichura's PPND16 rational approximations)."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        return -val
    return val


@njit(cache=True)
def _depth_table(cap):
    tab = np.empty(cap, np.int32)
    for i in range(cap):
        d = 0
        j = i + 1
        while j > 1:
            j >>= 1
            d += 1
        tab[i] = d
    return tab


@njit(cache=True)
def _collect(status, depth_tab, max_depth, max_leaves,
             leaves, growable, internals, nogs, pairs, stack):
    """Gather node lists of one tree (DFS order). Returns their counts."""
    nleaf = ngrow = nint = nnog = npair = 0
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        st = status[nd]
        if st == STATUS_LEAF:
            leaves[nleaf] = nd
            nleaf += 1
            if depth_tab[nd] < max_depth:
                growable[ngrow] = nd
                ngrow += 1
        elif st == STATUS_INTERNAL:
            internals[nint] = nd
            nint += 1
            lc = 2 * nd + 1
            rc = 2 * nd + 2
            if status[lc] == STATUS_LEAF and status[rc] == STATUS_LEAF:
                nogs[nnog] = nd
                nnog += 1
            if status[lc] == STATUS_INTERNAL:
                pairs[npair] = lc
                npair += 1
            if status[rc] == STATUS_INTERNAL:
                pairs[npair] = rc
                npair += 1
            stack[sp] = rc
            sp += 1
            stack[sp] = lc
            sp += 1
    if nleaf >= max_leaves:
        ngrow = 0
    return nleaf, ngrow, nint, nnog, npair


@njit(cache=True)
def _descend(status, var, cut, mask, iscat, X, i):
    nd = 0
    while status[nd] == STATUS_INTERNAL:
        v = var[nd]
        if iscat[v]:
            code = np.int64(X[i, v])
            if (mask[nd] >> code) & 1:
                nd = 2 * nd + 1
            else:
                nd = 2 * nd + 2
        else:
            if X[i, v] <= cut[nd]:
                nd = 2 * nd + 1
            else:
                nd = 2 * nd + 2
    return nd


@njit(cache=True)
def _assign_all(status, var, cut, mask, iscat, X, out):
    for i in range(X.shape[0]):
        out[i] = _descend(status, var, cut, mask, iscat, X, i)


@njit(cache=True)
def _hard_stats(assign, r, leafpos, counts, sums, nleaf):
    for l in range(nleaf):
        counts[l] = 0.0
        sums[l] = 0.0
    for i in range(assign.shape[0]):
        l = leafpos[assign[i]]
        counts[l] += 1.0
        sums[l] += r[i]


@njit(cache=True)
def _hard_marginal(counts, sums, nleaf, sigma2, smu2):
    """Log marginal likelihood terms that vary with the partition."""
    total = 0.0
    for l in range(nleaf):
        v = sigma2 + counts[l] * smu2
        total += 0.5 * math.log(sigma2 / v) + smu2 * sums[l] * sums[l] / (2.0 * sigma2 * v)
    return total


@njit(cache=True)
def _soft_phi(status, var, cut, mask, iscat, tau, X, leafpos, Phi, nleaf,
              snode, sweight):
    """Leaf path-probability matrix for all rows of X (zero-weight paths pruned)."""
    n = X.shape[0]
    for i in range(n):
        for l in range(nleaf):
            Phi[i, l] = 0.0
        sp = 0
        snode[sp] = 0
        sweight[sp] = 1.0
        sp += 1
        while sp > 0:
            sp -= 1
            nd = snode[sp]
            w = sweight[sp]
            if status[nd] == STATUS_LEAF:
                Phi[i, leafpos[nd]] += w
            else:
                v = var[nd]
                if iscat[v]:
                    code = np.int64(X[i, v])
                    pl = 1.0 if (mask[nd] >> code) & 1 else 0.0
                else:
                    z = (cut[nd] - X[i, v]) / tau
                    if z > 36.0:
                        pl = 1.0
                    elif z < -36.0:
                        pl = 0.0
                    else:
                        pl = 1.0 / (1.0 + math.exp(-z))
                if pl > 0.0:
                    snode[sp] = 2 * nd + 1
                    sweight[sp] = w * pl
                    sp += 1
                if pl < 1.0:
                    snode[sp] = 2 * nd + 2
                    sweight[sp] = w * (1.0 - pl)
                    sp += 1


@njit(cache=True)
def _soft_suffstats(Phi, r, n, nleaf, A, b):
    for l in range(nleaf):
        b[l] = 0.0
        for k in range(nleaf):
            A[l, k] = 0.0
    for i in range(n):
        for l in range(nleaf):
            w = Phi[i, l]
            if w != 0.0:
                b[l] += w * r[i]
                for k in range(l, nleaf):
                    A[l, k] += w * Phi[i, k]
    for l in range(nleaf):
        for k in range(l + 1, nleaf):
            A[k, l] = A[l, k]


@njit(cache=True)
def _chol_small(A, L, m):
    """In-place-free Cholesky of the leading m x m block; returns False if not PD."""
    for i in range(m):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _soft_marginal(A, b, nleaf, sigma2, smu2, L, u):
    """Varying log marginal terms for one soft tree. Fills u with M0^{-1} b."""
    ridge = sigma2 / smu2
    for l in range(nleaf):
        A[l, l] += ridge
    ok = _chol_small(A, L, nleaf)
    for l in range(nleaf):
        A[l, l] -= ridge
    if not ok:
        return -np.inf
    logdet = 0.0
    for l in range(nleaf):
        logdet += 2.0 * math.log(L[l, l])
        u[l] = b[l]
    # forward/back substitution: M0 u = b
    for i in range(nleaf):
        s = u[i]
        for k in range(i):
            s -= L[i, k] * u[k]
        u[i] = s / L[i, i]
    for i in range(nleaf - 1, -1, -1):
        s = u[i]
        for k in range(i + 1, nleaf):
            s -= L[k, i] * u[k]
        u[i] = s / L[i, i]
    quad = 0.0
    for l in range(nleaf):
        quad += b[l] * u[l]
    return -0.5 * (logdet + nleaf * math.log(smu2 / sigma2)) + quad / (2.0 * sigma2)


@njit(cache=True)
def _draw_var(rng, s_prob):
    u = rng.random()
    acc = 0.0
    for j in range(s_prob.shape[0]):
        acc += s_prob[j]
        if u < acc:
            return j
    return s_prob.shape[0] - 1


@njit(cache=True)
def _pnon(depth, alpha, beta):
    return alpha * (1.0 + depth) ** (-beta)


@njit(cache=True)
def run_chain(rng, Xs, ys, Xp, iscat, ncat, grid,
              M, n_burn, n_keep, thin,
              smu2, nu, lam,
              alpha, beta, move_probs,
              max_depth, max_leaves,
              soft, tau_init, tau_update, tau_rate, tau_step,
              sparsity, a_grid,
              probit, offset,
              out_theta_s, out_theta_p, out_sigma, out_s_mean):
    """Backfitting MCMC over a sum-of-trees ensemble.

    Handles three modes: Gaussian hard (BART), Gaussian soft (SBART with
    optional bandwidth and split-sparsity updates), and probit hard (latent
    Gaussian data augmentation with sigma pinned at 1). Outputs are on the
    internal (scaled / latent) scale; callers unscale.
    """
    n, D = Xs.shape
    Np = Xp.shape[0]
    ngrid = grid.shape[1]
    cap = 2 ** (max_depth + 1) - 1
    depth_tab = _depth_table(cap)

    status = np.zeros((M, cap), np.int8)
    var_ = np.zeros((M, cap), np.int32)
    cut_ = np.zeros((M, cap), np.float64)
    mask_ = np.zeros((M, cap), np.int64)
    mu_ = np.zeros((M, cap), np.float64)
    status[:, 0] = STATUS_LEAF
    assign = np.zeros((M, n), np.int32)
    fit = np.zeros((M, n), np.float64)
    tau = np.full(M, tau_init)

    leaves = np.empty(max_leaves + 2, np.int32)
    growable = np.empty(max_leaves + 2, np.int32)
    internals = np.empty(max_leaves + 2, np.int32)
    nogs = np.empty(max_leaves + 2, np.int32)
    pairs = np.empty(max_leaves + 2, np.int32)
    stack = np.empty(cap + 1, np.int32)
    leafpos = np.zeros(cap, np.int32)
    counts = np.empty(max_leaves + 2, np.float64)
    sums = np.empty(max_leaves + 2, np.float64)
    counts2 = np.empty(max_leaves + 2, np.float64)
    sums2 = np.empty(max_leaves + 2, np.float64)
    assign_buf = np.empty(n, np.int32)
    r = np.empty(n, np.float64)
    Phi = np.empty((n, max_leaves + 2), np.float64)
    Phi2 = np.empty((n, max_leaves + 2), np.float64)
    A = np.empty((max_leaves + 2, max_leaves + 2), np.float64)
    Lmat = np.empty((max_leaves + 2, max_leaves + 2), np.float64)
    bvec = np.empty(max_leaves + 2, np.float64)
    uvec = np.empty(max_leaves + 2, np.float64)
    zvec = np.empty(max_leaves + 2, np.float64)
    snode = np.empty(cap + 1, np.int32)
    sweight = np.empty(cap + 1, np.float64)
    phi_row = np.empty(max_leaves + 2, np.float64)
    s_prob = np.full(D, 1.0 / D)
    usage = np.zeros(D, np.int64)
    a_logw = np.empty(a_grid.shape[0], np.float64)
    a_conc = float(D)

    ycur = ys.copy()
    if probit:
        for i in range(n):
            ycur[i] = 0.0
    resid = ycur.copy()
    if probit:
        sigma2 = 1.0
    else:
        m0 = 0.0
        for i in range(n):
            m0 += ycur[i]
        m0 /= n
        sigma2 = 0.0
        for i in range(n):
            sigma2 += (ycur[i] - m0) ** 2
        sigma2 = sigma2 / max(n - 1, 1)
        if sigma2 <= 0.0:
            sigma2 = 1e-6

    pg, pp, pc, psw = move_probs[0], move_probs[1], move_probs[2], move_probs[3]
    n_total = n_burn + n_keep * thin
    eps_col = 1e-10

    for t in range(n_total):
        if probit:
            # latent truncated-normal data augmentation, trees fit z - offset
            for i in range(n):
                mean = offset + (ycur[i] - resid[i])
                u = rng.random()
                if u < 1e-300:
                    u = 1e-300
                if ys[i] > 0.5:
                    z = mean - ndtri(u * ndtr(mean))
                else:
                    z = mean + ndtri(u * ndtr(-mean))
                newy = z - offset
                resid[i] += newy - ycur[i]
                ycur[i] = newy

        for m in range(M):
            for i in range(n):
                r[i] = resid[i] + fit[m, i]
            nleaf, ngrow, nint, nnog, npair = _collect(
                status[m], depth_tab, max_depth, max_leaves,
                leaves, growable, internals, nogs, pairs, stack)
            for l in range(nleaf):
                leafpos[leaves[l]] = l

            # current marginal likelihood
            if soft:
                _soft_phi(status[m], var_[m], cut_[m], mask_[m], iscat, tau[m],
                          Xs, leafpos, Phi, nleaf, snode, sweight)
                _soft_suffstats(Phi, r, n, nleaf, A, bvec)
                cur_ll = _soft_marginal(A, bvec, nleaf, sigma2, smu2, Lmat, uvec)
            else:
                _hard_stats(assign[m], r, leafpos, counts, sums, nleaf)
                cur_ll = _hard_marginal(counts, sums, nleaf, sigma2, smu2)

            # ---- structural move -------------------------------------------
            mass = 0.0
            if ngrow > 0:
                mass += pg
            if nnog > 0:
                mass += pp
            if nint > 0:
                mass += pc
            if npair > 0:
                mass += psw
            if mass > 0.0:
                u = rng.random() * mass
                kind = -1
                acc = 0.0
                if ngrow > 0:
                    acc += pg
                    if kind < 0 and u < acc:
                        kind = 0
                if nnog > 0 and kind < 0:
                    acc += pp
                    if u < acc:
                        kind = 1
                if nint > 0 and kind < 0:
                    acc += pc
                    if u < acc:
                        kind = 2
                if kind < 0:
                    kind = 3

                # build the proposal in place, remembering how to undo it
                undo_a = -1
                undo_b = -1
                old_var = 0
                old_cut = 0.0
                old_mask = np.int64(0)
                old_var2 = 0
                old_cut2 = 0.0
                old_mask2 = np.int64(0)
                dlog = 0.0  # prior + proposal terms; likelihood added below
                valid = True
                if kind == 0:  # grow
                    p = growable[rng.integers(0, ngrow)]
                    d = depth_tab[p]
                    v = _draw_var(rng, s_prob)
                    if iscat[v]:
                        nrules = float(2 ** ncat[v] - 2)
                        mk = np.int64(rng.integers(1, 2 ** ncat[v] - 1))
                        cv = 0.0
                    else:
                        nrules = float(ngrid)
                        mk = np.int64(0)
                        cv = grid[v, rng.integers(0, ngrid)]
                    status[m, p] = STATUS_INTERNAL
                    var_[m, p] = v
                    cut_[m, p] = cv
                    mask_[m, p] = mk
                    status[m, 2 * p + 1] = STATUS_LEAF
                    status[m, 2 * p + 2] = STATUS_LEAF
                    undo_a = p
                    pn = _pnon(d, alpha, beta)
                    pn1 = _pnon(d + 1.0, alpha, beta)
                    # prior ratio (rule prior cancels against the proposal draw)
                    dlog += math.log(pn) + 2.0 * math.log(1.0 - pn1) - math.log(1.0 - pn)
                    dlog -= math.log(pg / mass) - math.log(ngrow)
                elif kind == 1:  # prune
                    p = nogs[rng.integers(0, nnog)]
                    d = depth_tab[p]
                    old_var = var_[m, p]
                    old_cut = cut_[m, p]
                    old_mask = mask_[m, p]
                    status[m, p] = STATUS_LEAF
                    status[m, 2 * p + 1] = STATUS_NONE
                    status[m, 2 * p + 2] = STATUS_NONE
                    undo_a = p
                    pn = _pnon(d, alpha, beta)
                    pn1 = _pnon(d + 1.0, alpha, beta)
                    dlog += math.log(1.0 - pn) - math.log(pn) - 2.0 * math.log(1.0 - pn1)
                    dlog -= math.log(pp / mass) - math.log(nnog)
                elif kind == 2:  # change
                    p = internals[rng.integers(0, nint)]
                    old_var = var_[m, p]
                    old_cut = cut_[m, p]
                    old_mask = mask_[m, p]
                    v = _draw_var(rng, s_prob)
                    if iscat[v]:
                        mk = np.int64(rng.integers(1, 2 ** ncat[v] - 1))
                        cv = 0.0
                        nr_new = float(2 ** ncat[v] - 2)
                    else:
                        mk = np.int64(0)
                        cv = grid[v, rng.integers(0, ngrid)]
                        nr_new = float(ngrid)
                    var_[m, p] = v
                    cut_[m, p] = cv
                    mask_[m, p] = mk
                    undo_a = p
                    # rule prior ratio cancels against the proposal rule draws
                else:  # swap rules of a parent-child internal pair
                    c = pairs[rng.integers(0, npair)]
                    p = (c - 1) >> 1
                    old_var = var_[m, p]
                    old_cut = cut_[m, p]
                    old_mask = mask_[m, p]
                    old_var2 = var_[m, c]
                    old_cut2 = cut_[m, c]
                    old_mask2 = mask_[m, c]
                    var_[m, p] = old_var2
                    cut_[m, p] = old_cut2
                    mask_[m, p] = old_mask2
                    var_[m, c] = old_var
                    cut_[m, c] = old_cut
                    mask_[m, c] = old_mask
                    undo_a = p
                    undo_b = c

                # node lists and likelihood of the proposal
                nleaf2, ngrow2, nint2, nnog2, npair2 = _collect(
                    status[m], depth_tab, max_depth, max_leaves,
                    leaves, growable, internals, nogs, pairs, stack)
                for l in range(nleaf2):
                    leafpos[leaves[l]] = l
                mass2 = 0.0
                if ngrow2 > 0:
                    mass2 += pg
                if nnog2 > 0:
                    mass2 += pp
                if nint2 > 0:
                    mass2 += pc
                if npair2 > 0:
                    mass2 += psw
                if kind == 0:
                    dlog += math.log(pp / mass2) - math.log(nnog2)
                elif kind == 1:
                    dlog += math.log(pg / mass2) - math.log(ngrow2)

                new_ll = -np.inf
                if soft:
                    _soft_phi(status[m], var_[m], cut_[m], mask_[m], iscat, tau[m],
                              Xs, leafpos, Phi2, nleaf2, snode, sweight)
                    for l in range(nleaf2):
                        colsum = 0.0
                        for i in range(n):
                            colsum += Phi2[i, l]
                        if colsum < eps_col:
                            valid = False
                    if valid:
                        _soft_suffstats(Phi2, r, n, nleaf2, A, bvec)
                        new_ll = _soft_marginal(A, bvec, nleaf2, sigma2, smu2, Lmat, uvec)
                        if new_ll == -np.inf:
                            valid = False
                else:
                    _assign_all(status[m], var_[m], cut_[m], mask_[m], iscat,
                                Xs, assign_buf)
                    _hard_stats(assign_buf, r, leafpos, counts2, sums2, nleaf2)
                    for l in range(nleaf2):
                        if counts2[l] == 0.0:
                            valid = False
                    if valid:
                        new_ll = _hard_marginal(counts2, sums2, nleaf2, sigma2, smu2)

                accept = False
                if valid:
                    log_alpha = new_ll - cur_ll + dlog
                    if log_alpha >= 0.0 or math.log(rng.random()) < log_alpha:
                        accept = True
                if accept:
                    if not soft:
                        for i in range(n):
                            assign[m, i] = assign_buf[i]
                else:
                    # undo the structural edit
                    if kind == 0:
                        status[m, undo_a] = STATUS_LEAF
                        status[m, 2 * undo_a + 1] = STATUS_NONE
                        status[m, 2 * undo_a + 2] = STATUS_NONE
                    elif kind == 1:
                        status[m, undo_a] = STATUS_INTERNAL
                        var_[m, undo_a] = old_var
                        cut_[m, undo_a] = old_cut
                        mask_[m, undo_a] = old_mask
                        status[m, 2 * undo_a + 1] = STATUS_LEAF
                        status[m, 2 * undo_a + 2] = STATUS_LEAF
                    elif kind == 2:
                        var_[m, undo_a] = old_var
                        cut_[m, undo_a] = old_cut
                        mask_[m, undo_a] = old_mask
                    else:
                        var_[m, undo_a] = old_var
                        cut_[m, undo_a] = old_cut
                        mask_[m, undo_a] = old_mask
                        var_[m, undo_b] = old_var2
                        cut_[m, undo_b] = old_cut2
                        mask_[m, undo_b] = old_mask2

            # refresh node lists after the (possibly rejected) move
            nleaf, ngrow, nint, nnog, npair = _collect(
                status[m], depth_tab, max_depth, max_leaves,
                leaves, growable, internals, nogs, pairs, stack)
            for l in range(nleaf):
                leafpos[leaves[l]] = l

            # ---- bandwidth update (soft mode, marginal over leaf values) ---
            if soft and tau_update:
                _soft_phi(status[m], var_[m], cut_[m], mask_[m], iscat, tau[m],
                          Xs, leafpos, Phi, nleaf, snode, sweight)
                _soft_suffstats(Phi, r, n, nleaf, A, bvec)
                cur_tll = _soft_marginal(A, bvec, nleaf, sigma2, smu2, Lmat, uvec)
                lt = math.log(tau[m])
                lt2 = lt + tau_step * rng.normal(0.0, 1.0)
                tau2 = math.exp(lt2)
                _soft_phi(status[m], var_[m], cut_[m], mask_[m], iscat, tau2,
                          Xs, leafpos, Phi2, nleaf, snode, sweight)
                okcol = True
                for l in range(nleaf):
                    colsum = 0.0
                    for i in range(n):
                        colsum += Phi2[i, l]
                    if colsum < eps_col:
                        okcol = False
                if okcol:
                    _soft_suffstats(Phi2, r, n, nleaf, A, bvec)
                    new_tll = _soft_marginal(A, bvec, nleaf, sigma2, smu2, Lmat, uvec)
                    la = new_tll - cur_tll - tau_rate * (tau2 - tau[m]) + (lt2 - lt)
                    if la >= 0.0 or math.log(rng.random()) < la:
                        tau[m] = tau2

            # ---- conjugate leaf redraw -------------------------------------
            if soft:
                _soft_phi(status[m], var_[m], cut_[m], mask_[m], iscat, tau[m],
                          Xs, leafpos, Phi, nleaf, snode, sweight)
                _soft_suffstats(Phi, r, n, nleaf, A, bvec)
                ridge = sigma2 / smu2
                for l in range(nleaf):
                    A[l, l] += ridge
                _chol_small(A, Lmat, nleaf)
                # posterior mean: solve (A + ridge I) u = b
                for l in range(nleaf):
                    uvec[l] = bvec[l]
                for i in range(nleaf):
                    s = uvec[i]
                    for k in range(i):
                        s -= Lmat[i, k] * uvec[k]
                    uvec[i] = s / Lmat[i, i]
                for i in range(nleaf - 1, -1, -1):
                    s = uvec[i]
                    for k in range(i + 1, nleaf):
                        s -= Lmat[k, i] * uvec[k]
                    uvec[i] = s / Lmat[i, i]
                for l in range(nleaf):
                    zvec[l] = rng.normal(0.0, 1.0)
                # mu = mean + sigma * L^{-T} z  (covariance sigma2 * M0^{-1})
                for i in range(nleaf - 1, -1, -1):
                    s = zvec[i]
                    for k in range(i + 1, nleaf):
                        s -= Lmat[k, i] * zvec[k]
                    zvec[i] = s / Lmat[i, i]
                sig = math.sqrt(sigma2)
                for l in range(nleaf):
                    mu_[m, leaves[l]] = uvec[l] + sig * zvec[l]
                for i in range(n):
                    val = 0.0
                    for l in range(nleaf):
                        if Phi[i, l] != 0.0:
                            val += Phi[i, l] * mu_[m, leaves[l]]
                    fit[m, i] = val
            else:
                _hard_stats(assign[m], r, leafpos, counts, sums, nleaf)
                for l in range(nleaf):
                    prec = counts[l] / sigma2 + 1.0 / smu2
                    mean = (sums[l] / sigma2) / prec
                    mu_[m, leaves[l]] = mean + rng.normal(0.0, 1.0) / math.sqrt(prec)
                for i in range(n):
                    fit[m, i] = mu_[m, assign[m, i]]
            for i in range(n):
                resid[i] = r[i] - fit[m, i]

        # ---- split-variable sparsity updates (soft mode) -------------------
        if soft and sparsity:
            for j in range(D):
                usage[j] = 0
            for m in range(M):
                nleaf, ngrow, nint, nnog, npair = _collect(
                    status[m], depth_tab, max_depth, max_leaves,
                    leaves, growable, internals, nogs, pairs, stack)
                for k in range(nint):
                    usage[var_[m, internals[k]]] += 1
            tot = 0.0
            for j in range(D):
                g = rng.standard_gamma(a_conc / D + usage[j])
                if g < 1e-300:
                    g = 1e-300
                s_prob[j] = g
                tot += g
            for j in range(D):
                s_prob[j] /= tot
            # concentration: a/(a+D) ~ Beta(0.5, 1), discretized on a_grid
            sum_log_s = 0.0
            for j in range(D):
                sum_log_s += math.log(s_prob[j])
            best = -np.inf
            for k in range(a_grid.shape[0]):
                a = a_grid[k]
                lamk = a / (a + D)
                w = (math.lgamma(a) - D * math.lgamma(a / D)
                     + (a / D - 1.0) * sum_log_s
                     - 0.5 * math.log(lamk) + math.log(D) - 2.0 * math.log(a + D)
                     + math.log(a))  # log-spaced grid: cell width proportional to a
                a_logw[k] = w
                if w > best:
                    best = w
            wsum = 0.0
            for k in range(a_grid.shape[0]):
                a_logw[k] = math.exp(a_logw[k] - best)
                wsum += a_logw[k]
            u = rng.random() * wsum
            acc = 0.0
            pick = a_grid.shape[0] - 1
            for k in range(a_grid.shape[0]):
                acc += a_logw[k]
                if u < acc:
                    pick = k
                    break
            a_conc = a_grid[pick]

        # ---- noise variance -------------------------------------------------
        if not probit:
            sse = 0.0
            for i in range(n):
                sse += resid[i] * resid[i]
            sigma2 = (nu * lam + sse) / rng.chisquare(nu + n)

        # ---- record ---------------------------------------------------------
        if t >= n_burn and (t - n_burn) % thin == 0:
            kidx = (t - n_burn) // thin
            out_sigma[kidx] = math.sqrt(sigma2)
            for i in range(n):
                out_theta_s[kidx, i] = ycur[i] - resid[i] + (offset if probit else 0.0)
            for i in range(Np):
                out_theta_p[kidx, i] = offset if probit else 0.0
            for m in range(M):
                nleaf, ngrow, nint, nnog, npair = _collect(
                    status[m], depth_tab, max_depth, max_leaves,
                    leaves, growable, internals, nogs, pairs, stack)
                for l in range(nleaf):
                    leafpos[leaves[l]] = l
                if soft:
                    for i in range(Np):
                        for l in range(nleaf):
                            phi_row[l] = 0.0
                        sp = 0
                        snode[sp] = 0
                        sweight[sp] = 1.0
                        sp += 1
                        while sp > 0:
                            sp -= 1
                            nd = snode[sp]
                            w = sweight[sp]
                            if status[m, nd] == STATUS_LEAF:
                                phi_row[leafpos[nd]] += w
                            else:
                                v = var_[m, nd]
                                if iscat[v]:
                                    code = np.int64(Xp[i, v])
                                    pl = 1.0 if (mask_[m, nd] >> code) & 1 else 0.0
                                else:
                                    z = (cut_[m, nd] - Xp[i, v]) / tau[m]
                                    if z > 36.0:
                                        pl = 1.0
                                    elif z < -36.0:
                                        pl = 0.0
                                    else:
                                        pl = 1.0 / (1.0 + math.exp(-z))
                                if pl > 0.0:
                                    snode[sp] = 2 * nd + 1
                                    sweight[sp] = w * pl
                                    sp += 1
                                if pl < 1.0:
                                    snode[sp] = 2 * nd + 2
                                    sweight[sp] = w * (1.0 - pl)
                                    sp += 1
                        val = 0.0
                        for l in range(nleaf):
                            if phi_row[l] != 0.0:
                                val += phi_row[l] * mu_[m, leaves[l]]
                        out_theta_p[kidx, i] += val
                else:
                    for i in range(Np):
                        nd = _descend(status[m], var_[m], cut_[m], mask_[m],
                                      iscat, Xp, i)
                        out_theta_p[kidx, i] += mu_[m, nd]
            if soft and sparsity:
                for j in range(D):
                    out_s_mean[j] += s_prob[j] / n_keep
