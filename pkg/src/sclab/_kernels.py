"""Compiled time stepping.

Every public code path (single step, trajectory, coupled pairs, ensembles)
funnels through ``_step_field`` so a member of an ensemble is bit-identical
to the same path run on its own.  Fields are flat C-ordered arrays of length
``n0 * n1``; 1-D grids use ``n1 == 1``.

Status codes: 0 ok, 1 NaN produced.  Overflow to +-inf is caught by the clamp
and counted as a clamp event.
"""

import math

import numba as nb
import numpy as np

from ._rng import fill_increments

OK = 0
NONFINITE = 1


@nb.njit(nogil=True, cache=True, inline="always")
def _flux(u, q0, fs):
    au = abs(u)
    if q0 == 2:
        p = au * au
    elif q0 == 4:
        p = au * au
        p = p * p
    else:
        p = 1.0
        for _ in range(q0):
            p *= au
    return fs * p * u


@nb.njit(nogil=True, cache=True)
def _noise_for_step(seed, K, m, p, sqrt_delta, c, cprof, dB, add):
    """Fill mode increments ``dB`` for the solver step starting at base index m.

    Returns ``sum_k c_k dB_k``; ``add[i]`` receives ``sum_k c_k alpha_k(x_i) dB_k``.
    """
    fill_increments(seed, K, m, p, sqrt_delta, dB)
    M = 0.0
    for k in range(K):
        M += c[k] * dB[k]
    add[:] = 0.0
    for k in range(K):
        b = dB[k]
        for i in range(add.shape[0]):
            add[i] += cprof[k, i] * b
    return M


@nb.njit(nogil=True, cache=True)
def _fill_flux(u, F, q0, fs):
    for i in range(u.shape[0]):
        F[i] = _flux(u[i], q0, fs)


@nb.njit(nogil=True, cache=True)
def _step_field(u, F, out, add, M, n1, lam0, lam1, mu0, mu1, sig, clamp):
    """Upwind transport + explicit diffusion + Euler-Maruyama noise.

    ``F`` must hold the flux of ``u``.  Ghost cells are 0 (so is their flux).
    The update is split into branch-free passes (transport and diffusion,
    noise, clamp) so the loops vectorise; the summation order per cell is
    ``u - transport + diffusion + additive noise + sigma(u) M``.
    Returns (status, number of clamped cells).
    """
    n = u.shape[0]
    if n1 == 1:
        ul = 0.0
        Fl = 0.0
        for i in range(n - 1):
            uc = u[i]
            Fc = F[i]
            out[i] = uc - lam0 * (Fc - Fl) + mu0 * (u[i + 1] - 2.0 * uc + ul) + add[i]
            ul = uc
            Fl = Fc
        uc = u[n - 1]
        out[n - 1] = uc - lam0 * (F[n - 1] - Fl) + mu0 * (0.0 - 2.0 * uc + ul) + add[n - 1]
    else:
        n0 = n // n1
        for i in range(n0):
            for j in range(n1):
                idx = i * n1 + j
                uc = u[idx]
                Fc = F[idx]
                if i > 0:
                    ul = u[idx - n1]
                    Fl = F[idx - n1]
                else:
                    ul = 0.0
                    Fl = 0.0
                ur = u[idx + n1] if i < n0 - 1 else 0.0
                if j > 0:
                    ud = u[idx - 1]
                    Fd = F[idx - 1]
                else:
                    ud = 0.0
                    Fd = 0.0
                uu = u[idx + 1] if j < n1 - 1 else 0.0
                out[idx] = (uc - lam0 * (Fc - Fl) + mu0 * (ur - 2.0 * uc + ul)
                            - lam1 * (Fc - Fd) + mu1 * (uu - 2.0 * uc + ud) + add[i])
    if sig == 1:
        for i in range(n):
            out[i] += u[i] * M
    elif sig == 2:
        for i in range(n):
            out[i] += math.tanh(u[i]) * M
    # +-inf is caught here as a clamp event; NaN fails every comparison
    nclamp = 0
    bad = False
    for i in range(n):
        v = out[i]
        if v > clamp:
            out[i] = clamp
            nclamp += 1
        elif v < -clamp:
            out[i] = -clamp
            nclamp += 1
        elif v != v:
            bad = True
    if bad:
        return NONFINITE, nclamp
    return OK, nclamp


@nb.njit(nogil=True, cache=True)
def _grad_sq_flat(u, n1, inv0, inv1, out):
    """Mean of squared one-sided differences on both faces, summed over axes.

    ``inv0``/``inv1`` are the inverse squared spacings.
    """
    n = u.shape[0]
    n0 = n // n1
    for i in range(n0):
        for j in range(n1):
            idx = i * n1 + j
            uc = u[idx]
            ul = u[idx - n1] if i > 0 else 0.0
            ur = u[idx + n1] if i < n0 - 1 else 0.0
            g = 0.5 * ((uc - ul) ** 2 + (ur - uc) ** 2) * inv0
            if n1 > 1:
                ud = u[idx - 1] if j > 0 else 0.0
                uu = u[idx + 1] if j < n1 - 1 else 0.0
                g += 0.5 * ((uc - ud) ** 2 + (uu - uc) ** 2) * inv1
            out[idx] = g


def grad_sq_field(u, dx0, dx1, out):
    """Squared discrete gradient of a 2-D kernel-shaped field."""
    n1 = u.shape[1]
    flat = np.empty(u.size)
    _grad_sq_flat(np.ascontiguousarray(u).ravel(), n1, 1.0 / dx0 ** 2, 1.0 / dx1 ** 2, flat)
    out[...] = flat.reshape(u.shape)


@nb.njit(nogil=True, cache=True)
def advance_single(u, n1, seed, m_start, p, sqrt_delta, nsteps, c, cprof,
                   lam0, lam1, mu0, mu1, q0, fs, sig, clamp,
                   record_every, snaps, dissip, nu_dt, inv0, inv1):
    """Advance one flat field ``nsteps`` solver steps in place.

    ``snaps[0]`` gets the initial state and ``snaps[r]`` the state after step
    ``r * record_every`` (the last slot holds the final state).  When
    ``nu_dt > 0`` , ``dissip`` accumulates ``dt * nu * |grad u|^2`` of the
    pre-step state.  Returns (status, clamp events, steps completed).
    """
    K = c.shape[0]
    n = u.shape[0]
    F = np.empty(n)
    tmp = np.empty(n)
    g2 = np.empty(n)
    dB = np.zeros(K)
    add = np.zeros(cprof.shape[1])
    nclamp = 0
    snaps[0, :] = u
    rec = 1
    for s in range(nsteps):
        M = _noise_for_step(seed, K, m_start + s * p, p, sqrt_delta, c, cprof, dB, add)
        _fill_flux(u, F, q0, fs)
        if nu_dt > 0.0:
            _grad_sq_flat(u, n1, inv0, inv1, g2)
            for i in range(n):
                dissip[i] += nu_dt * g2[i]
        status, nc = _step_field(u, F, tmp, add, M, n1, lam0, lam1, mu0, mu1, sig, clamp)
        nclamp += nc
        if status != OK:
            return status, nclamp, s
        u[:] = tmp
        if (s + 1) % record_every == 0 or s + 1 == nsteps:
            snaps[rec, :] = u
            rec += 1
    return OK, nclamp, nsteps


@nb.njit(nogil=True, cache=True)
def advance_pairs(U, V, n1, seeds, m_start, p, sqrt_delta, nsteps, c, cprof,
                  lam0, lam1, mu0, mu1, q0, fs, d, sig, clamp, record_every,
                  w, dV, dt, dist, fluxint, obs_u, obs_v, supnorm, clamps, status):
    """Advance coupled pairs ``(U[b], V[b])`` on the shared path of ``seeds[b]``.

    Per record slot: weighted L1 distance, the running time integral of
    ``sum_j int |A_j(u) - A_j(v)| dx`` (left Riemann sum over pre-step states),
    and the weighted L1 norms of each member.  ``supnorm`` is the largest
    ``|u|`` seen at record slots.  Terminal states are written back.
    """
    B = U.shape[0]
    K = c.shape[0]
    n = U.shape[1]
    Fu = np.empty(n)
    Fv = np.empty(n)
    dB = np.zeros(K)
    add = np.zeros(cprof.shape[1])
    for b in range(B):
        u = U[b].copy()
        v = V[b].copy()
        tu = np.empty(n)
        tv = np.empty(n)
        seed = seeds[b]
        acc = 0.0
        sup = 0.0
        ncl = 0
        st = OK
        dsum = 0.0
        nu_ = 0.0
        nv_ = 0.0
        for i in range(n):
            dsum += abs(u[i] - v[i]) * w[i]
            nu_ += abs(u[i]) * w[i]
            nv_ += abs(v[i]) * w[i]
            sup = max(sup, abs(u[i]), abs(v[i]))
        dist[b, 0] = dsum * dV
        fluxint[b, 0] = 0.0
        obs_u[b, 0] = nu_ * dV
        obs_v[b, 0] = nv_ * dV
        rec = 1
        for s in range(nsteps):
            M = _noise_for_step(seed, K, m_start + s * p, p, sqrt_delta, c, cprof, dB, add)
            fsum = 0.0
            for i in range(n):
                a = _flux(u[i], q0, fs)
                bb = _flux(v[i], q0, fs)
                Fu[i] = a
                Fv[i] = bb
                fsum += abs(a - bb)
            acc += dt * d * fsum * dV
            s1, c1 = _step_field(u, Fu, tu, add, M, n1, lam0, lam1, mu0, mu1, sig, clamp)
            s2, c2 = _step_field(v, Fv, tv, add, M, n1, lam0, lam1, mu0, mu1, sig, clamp)
            ncl += c1 + c2
            if s1 != OK or s2 != OK:
                st = NONFINITE
                break
            u, tu = tu, u
            v, tv = tv, v
            if (s + 1) % record_every == 0 or s + 1 == nsteps:
                dsum = 0.0
                nu_ = 0.0
                nv_ = 0.0
                for i in range(n):
                    dsum += abs(u[i] - v[i]) * w[i]
                    nu_ += abs(u[i]) * w[i]
                    nv_ += abs(v[i]) * w[i]
                    sup = max(sup, max(abs(u[i]), abs(v[i])))
                dist[b, rec] = dsum * dV
                fluxint[b, rec] = acc
                obs_u[b, rec] = nu_ * dV
                obs_v[b, rec] = nv_ * dV
                rec += 1
        U[b, :] = u
        V[b, :] = v
        supnorm[b] = sup
        clamps[b] = ncl
        status[b] = st


@nb.njit(nogil=True, cache=True)
def advance_batch(U, n1, seeds, m_start, p, sqrt_delta, nsteps, c, cprof,
                  lam0, lam1, mu0, mu1, q0, fs, sig, clamp, record_every,
                  w, dV, probe, obs_l1w, obs_probe, sup_p2, sup_p4,
                  supnorm, clamps, status):
    """Advance independent flat fields ``U[b]`` on the paths of ``seeds[b]``.

    Records the weighted L1 norm and the value at flat index ``probe`` per
    record slot and tracks ``sup_t ||u||_2^2`` and ``sup_t ||u||_4^4`` over
    every step (initial state included).  ``U`` holds the terminal fields on
    return.
    """
    B = U.shape[0]
    K = c.shape[0]
    n = U.shape[1]
    F = np.empty(n)
    tmp = np.empty(n)
    dB = np.zeros(K)
    add = np.zeros(cprof.shape[1])
    for b in range(B):
        u = U[b]
        seed = seeds[b]
        ncl = 0
        st = OK
        s2 = 0.0
        s4 = 0.0
        l1 = 0.0
        sup = 0.0
        for i in range(n):
            x = u[i]
            s2 += x * x
            s4 += x * x * x * x
            l1 += abs(x) * w[i]
            sup = max(sup, abs(x))
        best2 = s2 * dV
        best4 = s4 * dV
        obs_l1w[b, 0] = l1 * dV
        obs_probe[b, 0] = u[probe]
        rec = 1
        for s in range(nsteps):
            M = _noise_for_step(seed, K, m_start + s * p, p, sqrt_delta, c, cprof, dB, add)
            _fill_flux(u, F, q0, fs)
            st1, c1 = _step_field(u, F, tmp, add, M, n1, lam0, lam1, mu0, mu1, sig, clamp)
            ncl += c1
            if st1 != OK:
                st = NONFINITE
                break
            u[:] = tmp
            s2 = 0.0
            s4 = 0.0
            for i in range(n):
                x = u[i]
                s2 += x * x
                s4 += x * x * x * x
                sup = max(sup, abs(x))
            best2 = max(best2, s2 * dV)
            best4 = max(best4, s4 * dV)
            if (s + 1) % record_every == 0 or s + 1 == nsteps:
                l1 = 0.0
                for i in range(n):
                    l1 += abs(u[i]) * w[i]
                obs_l1w[b, rec] = l1 * dV
                obs_probe[b, rec] = u[probe]
                rec += 1
        sup_p2[b] = best2
        sup_p4[b] = best4
        supnorm[b] = sup
        clamps[b] = ncl
        status[b] = st
