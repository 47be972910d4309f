"""
线性分配模块
带禁止项的最小代价匹配, 基于 scipy 的 linear_sum_assignment

每个允许项的代价减去大常数M, 禁止项记为0 (等同于不匹配), 因此求得的是
"允许项匹配数最多, 其次总代价最小"的匹配。
多个最优解并列时, 按行从小到大为每一行选取仍能保持最优的最小列下标,
得到按 (行, 列) 字典序最小的最优匹配。
"""

import numpy as np
from scipy.optimize import linear_sum_assignment


def _solve(values, rows, cols):
    """子问题的最优值和 {行: 列} 解"""
    if not rows or not cols:
        return 0.0, {}
    sub = values[np.ix_(rows, cols)]
    r_ind, c_ind = linear_sum_assignment(sub)
    return float(sub[r_ind, c_ind].sum()), {rows[i]: cols[j] for i, j in zip(r_ind, c_ind)}


def hungarian(cost, forbidden=None):
    """
    最小代价匹配

    参数:
        cost: (n,m) 代价矩阵, inf/nan 视为禁止
        forbidden: 可选的 (n,m) 布尔矩阵, True 为禁止

    返回:
        按行排序的 (row, col) 列表; 只包含允许项, 并列时取字典序最小者
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        return []
    mask = ~np.isfinite(cost)
    if forbidden is not None:
        mask = mask | np.asarray(forbidden, dtype=bool)
    if mask.all():
        return []

    allowed = cost[~mask]
    n, m = cost.shape
    big = 2.0 * (min(n, m) + 1) * (float(np.max(np.abs(allowed))) + 1.0)
    filled = np.where(mask, 0.0, cost)
    values = np.where(mask, 0.0, filled - big)

    rows, cols = list(range(n)), list(range(m))
    best, current = _solve(values, rows, cols)
    tol = 1e-12 * (1.0 + abs(best))

    pairs = []
    for r in range(n):
        rows.remove(r)
        chosen = current.get(r)
        if chosen is not None and mask[r, chosen]:
            chosen = None
        for c in cols:
            if chosen is not None and c >= chosen:
                break
            if mask[r, c]:
                continue
            value, solution = _solve(values, rows, [k for k in cols if k != c])
            if values[r, c] + value <= best + tol:
                chosen, current = c, solution
                best = value + values[r, c]
                break
        if chosen is None:
            # 该行在任何最优解中都不匹配
            continue
        best -= values[r, chosen]
        cols.remove(chosen)
        pairs.append((r, chosen))
    return pairs


def assignment_cost(cost, pairs):
    """匹配对的代价之和"""
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[r, c] for r, c in pairs))
