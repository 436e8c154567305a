# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``.

Signatures and results match the pure-Python module exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t, int64_t

cnp.import_array()

cdef enum:
    EMPTY = 0
    WALL = 1
    KEY = 2
    DOOR = 3
    GOAL = 4

cdef int DY[4]
cdef int DX[4]
DY[:] = [-1, 1, 0, 0]
DX[:] = [0, 0, -1, 1]


cdef inline uint64_t _next(uint64_t* state) nogil:
    state[0] += 0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline Py_ssize_t _below(uint64_t* state, Py_ssize_t n) nogil:
    return <Py_ssize_t>(_next(state) % <uint64_t>n)


def carve_maze(seed, int height, int width):
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    grid_arr = np.full((height, width), WALL, dtype=np.uint8)
    cdef uint8_t[:, ::1] grid = grid_arr
    cdef Py_ssize_t ch = (height - 1) // 2, cw = (width - 1) // 2
    cdef Py_ssize_t ncells = ch * cw
    visited_arr = np.zeros(ncells, dtype=np.uint8)
    stack_arr = np.zeros(ncells, dtype=np.int64)
    cdef uint8_t[::1] visited = visited_arr
    cdef int64_t[::1] stack = stack_arr
    cdef Py_ssize_t sp = 0, cur, r, c, nr, nc, k, d, nxt
    cdef Py_ssize_t nbrs[4]

    cdef Py_ssize_t start = _below(&state, ncells)
    visited[start] = 1
    grid[2 * (start // cw) + 1, 2 * (start % cw) + 1] = EMPTY
    stack[0] = start
    sp = 1
    while sp > 0:
        cur = stack[sp - 1]
        r = cur // cw
        c = cur % cw
        k = 0
        for d in range(4):
            nr = r + DY[d]
            nc = c + DX[d]
            if 0 <= nr < ch and 0 <= nc < cw and not visited[nr * cw + nc]:
                nbrs[k] = nr * cw + nc
                k += 1
        if k == 0:
            sp -= 1
            continue
        nxt = nbrs[_below(&state, k)]
        nr = nxt // cw
        nc = nxt % cw
        grid[r + nr + 1, c + nc + 1] = EMPTY
        grid[2 * nr + 1, 2 * nc + 1] = EMPTY
        visited[nxt] = 1
        stack[sp] = nxt
        sp += 1

    cdef Py_ssize_t agent = _below(&state, ncells)
    cdef Py_ssize_t goal = _below(&state, ncells - 1)
    if goal >= agent:
        goal += 1
    grid[2 * (goal // cw) + 1, 2 * (goal % cw) + 1] = GOAL
    return grid_arr, 2 * (agent // cw) + 1, 2 * (agent % cw) + 1


def layout_key_door(seed, int height, int width):
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    grid_arr = np.zeros((height, width), dtype=np.uint8)
    cdef uint8_t[:, ::1] grid = grid_arr
    cdef Py_ssize_t i
    for i in range(width):
        grid[0, i] = WALL
        grid[height - 1, i] = WALL
    for i in range(height):
        grid[i, 0] = WALL
        grid[i, width - 1] = WALL

    cdef Py_ssize_t inner_h = height - 2
    cdef Py_ssize_t wall_x = 2 + _below(&state, width - 4)
    cdef Py_ssize_t door_y = 1 + _below(&state, inner_h)
    for i in range(1, height - 1):
        grid[i, wall_x] = WALL
    grid[door_y, wall_x] = DOOR

    cdef Py_ssize_t n_left = (wall_x - 1) * inner_h
    cdef Py_ssize_t agent = _below(&state, n_left)
    cdef Py_ssize_t key = _below(&state, n_left - 1)
    if key >= agent:
        key += 1
    grid[1 + key % inner_h, 1 + key // inner_h] = KEY

    cdef Py_ssize_t n_right = (width - 2 - wall_x) * inner_h
    cdef Py_ssize_t goal = _below(&state, n_right)
    grid[1 + goal % inner_h, wall_x + 1 + goal // inner_h] = GOAL
    return grid_arr, 1 + agent % inner_h, 1 + agent // inner_h


def grid_step(uint8_t[:, :, ::1] grid, int64_t[:, ::1] agent, uint8_t[::1] carrying,
              int64_t[::1] steps, int64_t[::1] actions, int64_t max_steps,
              double step_penalty, bint key_door):
    cdef Py_ssize_t n = grid.shape[0]
    rewards_arr = np.zeros(n, dtype=np.float64)
    dones_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] rewards = rewards_arr
    cdef uint8_t[::1] dones = dones_arr
    cdef Py_ssize_t i, y, x, ny, nx, d
    cdef int64_t a
    cdef uint8_t cell
    with nogil:
        for i in range(n):
            steps[i] += 1
            a = actions[i]
            y = agent[i, 0]
            x = agent[i, 1]
            if a < 4:
                ny = y + DY[a]
                nx = x + DX[a]
                cell = grid[i, ny, nx]
                if cell == EMPTY or cell == GOAL:
                    y = ny
                    x = nx
                    agent[i, 0] = y
                    agent[i, 1] = x
            elif key_door and a == 4:
                if not carrying[i]:
                    for d in range(4):
                        if grid[i, y + DY[d], x + DX[d]] == KEY:
                            grid[i, y + DY[d], x + DX[d]] = EMPTY
                            carrying[i] = 1
                            break
            elif key_door and a == 5:
                if carrying[i]:
                    for d in range(4):
                        if grid[i, y + DY[d], x + DX[d]] == DOOR:
                            grid[i, y + DY[d], x + DX[d]] = EMPTY
                            break

            if grid[i, y, x] == GOAL:
                if key_door:
                    rewards[i] = 1.0 - 0.9 * (<double>steps[i] / <double>max_steps)
                else:
                    rewards[i] = 1.0
                dones[i] = 1
            else:
                rewards[i] = -step_penalty
                if steps[i] >= max_steps:
                    dones[i] = 1
    return rewards_arr, dones_arr


def encode_grid_obs(uint8_t[:, :, ::1] grid, int64_t[:, ::1] agent, bint key_door, bint egocentric=False):
    cdef Py_ssize_t n = grid.shape[0], height = grid.shape[1], width = grid.shape[2]
    cdef Py_ssize_t h = height - 2, w = width - 2
    cdef Py_ssize_t n_ch = 5 if key_door else 3
    cdef Py_ssize_t goal_ch = n_ch - 1
    cdef Py_ssize_t vh = 2 * h - 1 if egocentric else h
    cdef Py_ssize_t vw = 2 * w - 1 if egocentric else w
    obs_arr = np.zeros((n, n_ch, vh, vw), dtype=np.float64)
    cdef double[:, :, :, ::1] obs = obs_arr
    cdef Py_ssize_t i, y, x, gy, gx, oy, ox
    cdef uint8_t cell
    with nogil:
        for i in range(n):
            # grid interior coordinate that lands at view (0, 0)
            if egocentric:
                oy = agent[i, 0] - h
                ox = agent[i, 1] - w
            else:
                oy = 0
                ox = 0
            for y in range(vh):
                for x in range(vw):
                    gy = y + oy
                    gx = x + ox
                    if gy < 0 or gy >= h or gx < 0 or gx >= w:
                        obs[i, 0, y, x] = 1.0
                        continue
                    cell = grid[i, gy + 1, gx + 1]
                    if cell == WALL:
                        obs[i, 0, y, x] = 1.0
                    elif cell == GOAL:
                        obs[i, goal_ch, y, x] = 1.0
                    elif key_door and cell == KEY:
                        obs[i, 2, y, x] = 1.0
                    elif key_door and cell == DOOR:
                        obs[i, 3, y, x] = 1.0
            if egocentric:
                obs[i, 1, h - 1, w - 1] = 1.0
            else:
                obs[i, 1, agent[i, 0] - 1, agent[i, 1] - 1] = 1.0
    return obs_arr.reshape(n, -1)


def gae(rewards, values, dones, double gamma, double lam):
    r_arr = np.ascontiguousarray(rewards, dtype=np.float64)
    v_arr = np.ascontiguousarray(values, dtype=np.float64)
    d_arr = np.ascontiguousarray(dones, dtype=np.float64)
    shape = r_arr.shape
    cdef Py_ssize_t T = shape[0]
    cdef Py_ssize_t n = r_arr.size // T if T > 0 else 0
    cdef double[:, ::1] r = r_arr.reshape(T, n)
    cdef double[:, ::1] v = v_arr.reshape(T + 1, n)
    cdef double[:, ::1] dn = d_arr.reshape(T, n)
    adv_arr = np.zeros((T, n), dtype=np.float64)
    cdef double[:, ::1] adv = adv_arr
    cdef Py_ssize_t t, j
    cdef double nonterminal, delta, last
    with nogil:
        for j in range(n):
            last = 0.0
            for t in range(T - 1, -1, -1):
                nonterminal = 1.0 - dn[t, j]
                delta = r[t, j] + gamma * v[t + 1, j] * nonterminal - v[t, j]
                last = delta + gamma * lam * nonterminal * last
                adv[t, j] = last
    return adv_arr.reshape(shape)
