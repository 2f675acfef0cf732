"""Numba-compiled inner loops.

Pure array-in/array-out helpers used by the hot paths (Monte Carlo
trials, ribbon builds).  Each kernel has a slow reference twin in the
test suite; behavior here is normative only through the public module
APIs that wrap it.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U0 = np.uint64(0)
_U1 = np.uint64(1)


@njit(cache=True, inline="always")
def _ctz64(x):
    """Index of the lowest set bit of a nonzero uint64."""
    n = 0
    if x & np.uint64(0xFFFFFFFF) == _U0:
        n += 32
        x >>= np.uint64(32)
    if x & np.uint64(0xFFFF) == _U0:
        n += 16
        x >>= np.uint64(16)
    if x & np.uint64(0xFF) == _U0:
        n += 8
        x >>= np.uint64(8)
    if x & np.uint64(0xF) == _U0:
        n += 4
        x >>= np.uint64(4)
    if x & np.uint64(0x3) == _U0:
        n += 2
        x >>= np.uint64(2)
    if x & _U1 == _U0:
        n += 1
    return n


@njit(cache=True)
def match_kernel(indptr, cells, m):
    """Key-perfect bipartite matching via greedy pass + BFS augmenting paths.

    Returns (feasible, cell_of, key_in); aborts on the first key with no
    augmenting path, which already settles infeasibility.
    """
    n = indptr.size - 1
    cell_of = np.full(n, -1, np.int64)
    key_in = np.full(m, -1, np.int64)
    for x in range(n):
        for p in range(indptr[x], indptr[x + 1]):
            j = cells[p]
            if key_in[j] < 0:
                key_in[j] = x
                cell_of[x] = j
                break
    stamp = np.full(m, -1, np.int64)
    parent = np.empty(m, np.int64)
    bfs = np.empty(m, np.int64)
    for x in range(n):
        if cell_of[x] >= 0:
            continue
        qh = 0
        qt = 0
        free_cell = -1
        for p in range(indptr[x], indptr[x + 1]):
            j = cells[p]
            if stamp[j] != x:
                stamp[j] = x
                parent[j] = -1
                bfs[qt] = j
                qt += 1
        while qh < qt:
            j = bfs[qh]
            qh += 1
            y = key_in[j]
            if y < 0:
                free_cell = j
                break
            for p in range(indptr[y], indptr[y + 1]):
                j2 = cells[p]
                if stamp[j2] != x:
                    stamp[j2] = x
                    parent[j2] = j
                    bfs[qt] = j2
                    qt += 1
        if free_cell < 0:
            return False, cell_of, key_in
        j = free_cell
        while parent[j] >= 0:
            pj = parent[j]
            y = key_in[pj]
            key_in[j] = y
            cell_of[y] = j
            j = pj
        key_in[j] = x
        cell_of[x] = j
    return True, cell_of, key_in


@njit(cache=True)
def peel_kernel(indptr, cells, m):
    """Multigraph peeling: place keys owning a remaining-degree-1 cell.

    Degrees count candidate incidences with multiplicity.  Returns
    (placed_count, cell_of); the stuck core is the set of keys with
    cell_of < 0.
    """
    n = indptr.size - 1
    E = cells.size
    deg = np.zeros(m, np.int64)
    for p in range(E):
        deg[cells[p]] += 1
    cstart = np.zeros(m + 1, np.int64)
    for p in range(E):
        cstart[cells[p] + 1] += 1
    for j in range(m):
        cstart[j + 1] += cstart[j]
    inc_key = np.empty(E, np.int64)
    fill = cstart[:m].copy()
    for x in range(n):
        for p in range(indptr[x], indptr[x + 1]):
            j = cells[p]
            inc_key[fill[j]] = x
            fill[j] += 1
    alive = np.ones(n, np.bool_)
    cell_of = np.full(n, -1, np.int64)
    stack = np.empty(E + m + 1, np.int64)
    sp = 0
    for j in range(m):
        if deg[j] == 1:
            stack[sp] = j
            sp += 1
    placed = 0
    while sp > 0:
        sp -= 1
        j = stack[sp]
        if deg[j] != 1:
            continue
        x = -1
        for p in range(cstart[j], cstart[j + 1]):
            if alive[inc_key[p]]:
                x = inc_key[p]
                break
        if x < 0:
            continue
        cell_of[x] = j
        alive[x] = False
        placed += 1
        for p in range(indptr[x], indptr[x + 1]):
            jj = cells[p]
            deg[jj] -= 1
            if deg[jj] == 1:
                stack[sp] = jj
                sp += 1
    return placed, cell_of


@njit(cache=True)
def ribbon_insert_kernel(starts, coeffs, rhs, slot_coeff, slot_rhs):
    """Insert banded rows by incremental elimination on leading columns.

    slot_coeff[j] == 0 marks a free slot; stored coefficients are
    relative to their slot with bit 0 set.  Returns
    (fail_row, xors, placed, redundant); fail_row is -1 unless some row
    reduced to 0 = nonzero, in which case it is that row's index.
    """
    xors = 0
    placed = 0
    redundant = 0
    for i in range(starts.size):
        s = starts[i]
        c = coeffs[i]
        v = rhs[i]
        while True:
            t = _ctz64(c)
            s += t
            c >>= np.uint64(t)
            if slot_coeff[s] == _U0:
                slot_coeff[s] = c
                slot_rhs[s] = v
                placed += 1
                break
            c ^= slot_coeff[s]
            v ^= slot_rhs[s]
            xors += 1
            if c == _U0:
                if v != _U0:
                    return i, xors, placed, redundant
                redundant += 1
                break
    return -1, xors, placed, redundant


@njit(cache=True)
def back_substitute_kernel(slot_coeff, slot_rhs, fill_values):
    """Solve an eliminated ribbon state from the highest column down.

    Free columns take fill_values[j]; pivot columns get their rhs xored
    with the already-assigned higher columns selected by their stored
    coefficients.
    """
    m = slot_coeff.size
    z = np.zeros(m, np.uint64)
    for j in range(m - 1, -1, -1):
        cc = slot_coeff[j]
        if cc == _U0:
            z[j] = fill_values[j]
        else:
            acc = slot_rhs[j]
            cc >>= _U1
            idx = j + 1
            while cc != _U0:
                if cc & _U1 != _U0:
                    acc ^= z[idx]
                cc >>= _U1
                idx += 1
            z[j] = acc
    return z


@njit(cache=True)
def plan_bumps_kernel(x, g, w, prefix, margin_prefix, margin_all):
    """Group-wise bump planning over per-position arrival counts.

    Sweeps groups of g starting positions left to right.  A group keeps
    code 0 while the pending-key queue stays at or below
    w - 1 - margin_prefix within the group and a lookahead of w
    positions beyond it; otherwise the group's first `prefix` positions
    are dropped (code 1, checked against w - 1 - margin_all), and
    dropping the whole group (code 2) is the always-accepted last
    resort.  The margins keep headroom between the placement bound and
    the rank needs of random coefficients.
    """
    P = x.size
    ngroups = (P + g - 1) // g
    codes = np.zeros(ngroups, np.int8)
    q = 0
    for G in range(ngroups):
        gs = G * g
        ge = min(gs + g, P)
        la_end = min(ge + w, P)
        for code in range(3):
            limit = w - 1 - (margin_prefix if code == 0 else margin_all)
            qq = q
            ok = True
            for i in range(gs, la_end):
                if i >= ge:
                    xi = x[i]
                elif code == 2:
                    xi = 0
                elif code == 1 and i < gs + prefix:
                    xi = 0
                else:
                    xi = x[i]
                qq += xi - 1
                if qq < 0:
                    qq = 0
                if qq > limit:
                    ok = False
                    break
            if ok or code == 2:
                codes[G] = code
                qq = q
                for i in range(gs, ge):
                    if code == 2:
                        xi = 0
                    elif code == 1 and i < gs + prefix:
                        xi = 0
                    else:
                        xi = x[i]
                    qq += xi - 1
                    if qq < 0:
                        qq = 0
                q = qq
                break
    return codes


@njit(cache=True)
def balls_maxload_kernel(choices, m):
    """Sequential d-choice placement; each ball goes to the least-loaded
    sampled bin (ties to the lowest index).  Returns the final max load."""
    loads = np.zeros(m, np.int64)
    n, d = choices.shape
    maxload = 0
    for i in range(n):
        best = choices[i, 0]
        for t in range(1, d):
            c = choices[i, t]
            if loads[c] < loads[best] or (loads[c] == loads[best] and c < best):
                best = c
        loads[best] += 1
        if loads[best] > maxload:
            maxload = loads[best]
    return maxload
