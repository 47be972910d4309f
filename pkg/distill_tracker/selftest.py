"""
自检模块
梯度有限差分检查、损失黄金值、匈牙利算法与穷举对比、评测指标与穷举对比
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from loguru import logger

from assignment import assignment_cost, hungarian
from geometry import Box, ScoredDetection, iou_matrix
from losses import (FocalParams, HuberParams, LossWeights, embedding_loss, focal_loss, grad_check,
                    huber_loss, total_loss)
from metrics import average_precision, clear_metrics, idf1
from postprocess import PostprocessConfig, postprocess


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ''


# ---------------------------------------------------------------- 穷举参照

@lru_cache(maxsize=None)
def _permutations(n, m):
    return np.array(list(itertools.permutations(range(m), n)), dtype=int).reshape(-1, n)


def brute_force_min_cost(cost):
    """所有 min(n,m) 大小匹配中的最小总代价"""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    if n > m:
        cost, (n, m) = cost.T, (m, n)
    perms = _permutations(n, m)
    return float(cost[np.arange(n), perms].sum(axis=1).min())


def brute_force_lexicographic(cost):
    """n <= m 时所有最优完全匹配中, 按行依次取列下标最小的那个"""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    perms = _permutations(n, m)
    totals = cost[np.arange(n), perms].sum(axis=1)
    optimal = perms[totals <= totals.min() + 1e-9]
    return list(enumerate(min(tuple(int(c) for c in p) for p in optimal)))


def brute_force_partial(cost, forbidden):
    """
    枚举所有只用允许项的部分匹配

    返回:
        (最大匹配数, 该匹配数下的最小总代价)
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    best = (0, 0.0)

    def search(row, used, size, total):
        nonlocal best
        if row == n:
            if size > best[0] or (size == best[0] and total < best[1]):
                best = (size, total)
            return
        search(row + 1, used, size, total)
        for col in range(m):
            if col not in used and not forbidden[row, col]:
                search(row + 1, used | {col}, size + 1, total + cost[row, col])

    search(0, frozenset(), 0, 0.0)
    return best


def _brute_frame(gt_entries, hyp_entries, carried, iou_thresh):
    ious = iou_matrix([e[1] for e in gt_entries], [e[1] for e in hyp_entries])
    hyp_pos = {e[0]: j for j, e in enumerate(hyp_entries)}
    fixed = []
    for i, entry in enumerate(gt_entries):
        j = hyp_pos.get(carried.get(entry[0]))
        if j is not None and j not in {f[1] for f in fixed} and ious[i, j] >= iou_thresh:
            fixed.append((i, j))
    rows = [i for i in range(len(gt_entries)) if i not in {f[0] for f in fixed}]
    cols = [j for j in range(len(hyp_entries)) if j not in {f[1] for f in fixed}]

    best, best_key = [], (0, 0.0)
    for k in range(min(len(rows), len(cols)), 0, -1):
        for chosen_rows in itertools.combinations(rows, k):
            for chosen_cols in itertools.permutations(cols, k):
                pairs = list(zip(chosen_rows, chosen_cols))
                if all(ious[i, j] >= iou_thresh for i, j in pairs):
                    key = (k, sum(1.0 - ious[i, j] for i, j in pairs))
                    if not best or key[1] < best_key[1] - 1e-12:
                        best, best_key = pairs, key
        if best:
            break
    return fixed + best, ious


def brute_force_clear(gts, hyps, iou_thresh=0.5):
    """
    逐帧穷举对应关系的 CLEAR 参照实现, 返回 (MOTA, FP, FN, IDSW)

    每个真值沿用最近一次的对应假设, 按真值在帧内的顺序先到先得
    """
    fp = fn = idsw = num_gt = 0
    last = {}
    for frame in sorted(set(gts) | set(hyps)):
        g, h = gts.get(frame, []), hyps.get(frame, [])
        pairs, _ = _brute_frame(g, h, last, iou_thresh)
        for i, j in pairs:
            gid, hid = g[i][0], h[j][0]
            if gid in last and last[gid] != hid:
                idsw += 1
            last[gid] = hid
        fp += len(h) - len(pairs)
        fn += len(g) - len(pairs)
        num_gt += len(g)
    mota = 1.0 - (fn + fp + idsw) / num_gt if num_gt else math.nan
    return mota, fp, fn, idsw


def brute_force_idf1(gts, hyps, iou_thresh=0.5):
    """枚举全部身份映射的 IDF1 参照实现"""
    gt_ids = sorted({e[0] for v in gts.values() for e in v})
    hyp_ids = sorted({e[0] for v in hyps.values() for e in v})
    num_gt = sum(len(v) for v in gts.values())
    num_hyp = sum(len(v) for v in hyps.values())
    if num_gt == 0 and num_hyp == 0:
        return 1.0

    def overlap(gid, hid):
        count = 0
        for frame in set(gts) & set(hyps):
            gb = [e[1] for e in gts[frame] if e[0] == gid]
            hb = [e[1] for e in hyps[frame] if e[0] == hid]
            if gb and hb and iou_matrix(gb, hb)[0, 0] >= iou_thresh:
                count += 1
        return count

    table = {(g, h): overlap(g, h) for g in gt_ids for h in hyp_ids}
    best = 0
    k = min(len(gt_ids), len(hyp_ids))
    for chosen in itertools.permutations(hyp_ids + [None] * k, len(gt_ids)):
        used = [h for h in chosen if h is not None]
        if len(set(used)) != len(used):
            continue
        best = max(best, sum(table[(g, h)] for g, h in zip(gt_ids, chosen) if h is not None))
    return 2.0 * best / (num_gt + num_hyp)


# ---------------------------------------------------------------- 手工算例

def clear_example():
    """2帧×2个真值, 1次漏检, 1次身份切换, MOTA = 0.5"""
    a, b = Box(0, 0, 10, 10), Box(50, 50, 60, 60)
    gts = {1: [(1, a), (2, b)], 2: [(1, a), (2, b)]}
    hyps = {1: [(11, a, 1.0), (12, b, 1.0)], 2: [(13, a, 1.0)]}
    return gts, hyps


def split_identity_example(length=10):
    """一个真值身份前一半由A覆盖, 后一半由B覆盖, IDF1 = 0.5"""
    box = Box(0, 0, 10, 20)
    gts = {f: [(1, box)] for f in range(1, length + 1)}
    hyps = {f: [(1 if f <= length // 2 else 2, box, 1.0)] for f in range(1, length + 1)}
    return gts, hyps


def ranked_fp_example():
    """一个真值, 误检分数高于正确检测, AP = 0.5"""
    gts = {1: [(1, Box(0, 0, 10, 10))]}
    dets = {1: [ScoredDetection(Box(100, 100, 110, 110), 0.9), ScoredDetection(Box(0, 0, 10, 10), 0.8)]}
    return dets, gts


def random_small_scenario(rng, max_ids=3, max_frames=5):
    """随机小场景: 至多3个真值身份, 至多5帧, 假设框为抖动后的真值框或随机框"""
    n_frames = int(rng.integers(1, max_frames + 1))
    n_gt = int(rng.integers(0, max_ids + 1))
    hyp_pool = [101, 102, 103]
    gts, hyps = {}, {}
    for frame in range(1, n_frames + 1):
        g = []
        for gid in range(1, n_gt + 1):
            if rng.random() < 0.85:
                x, y = rng.uniform(0, 20, size=2)
                g.append((gid, Box(x, y, x + 6 + rng.uniform(0, 2), y + 6 + rng.uniform(0, 2))))
        h = []
        ids = list(rng.permutation(hyp_pool))
        for gid, box in g:
            if ids and rng.random() < 0.8:
                dx, dy = rng.normal(0, 1.2, size=2)
                h.append((int(ids.pop()), box.translate(dx, dy), 1.0))
        if ids and rng.random() < 0.3:
            x, y = rng.uniform(0, 20, size=2)
            h.append((int(ids.pop()), Box(x, y, x + 7, y + 7), 1.0))
        gts[frame] = g
        hyps[frame] = h
    return gts, hyps


# ---------------------------------------------------------------- 检查项

def _check(name, condition, detail=''):
    return CheckResult(name, bool(condition), detail)


def check_gradients(rng):
    focal = FocalParams()
    huber = HuberParams()
    p = rng.uniform(0.01, 0.99, size=100)
    y = rng.integers(0, 2, size=100)
    err_focal = max(grad_check(lambda x, yi=yi: focal_loss(x, yi, focal), [pi]) for pi, yi in zip(p, y))

    r = rng.uniform(-1.0, 1.0, size=400)
    r = r[np.abs(np.abs(r) - huber.delta) > 1e-4][:100]
    err_huber = grad_check(lambda x: huber_loss(x, 0.0, huber), list(r))

    targets = rng.normal(size=(5, 8))
    samples = [rng.normal(size=(5, 8)) for _ in range(20)]
    err_emb = grad_check(lambda x: embedding_loss(x, targets), samples)
    return [
        _check('focal梯度', err_focal < 1e-4, f'最大相对误差 {err_focal:.2e}'),
        _check('huber梯度', err_huber < 1e-4, f'最大相对误差 {err_huber:.2e}'),
        _check('L2嵌入梯度', err_emb < 1e-4, f'最大相对误差 {err_emb:.2e}'),
    ]


def check_golden_values():
    focal, _ = focal_loss(0.9, 1)
    closed_form = 0.25 * 0.1 ** 1.5 * -math.log(0.9)
    huber, _ = huber_loss(1.0, 0.0)
    total = total_loss(0.1, 0.01, 0.05, LossWeights())
    return [
        _check('focal黄金值', abs(focal - closed_form) < 1e-12 and abs(focal - 8.331e-4) < 2e-7, f'{focal:.7e}'),
        _check('huber黄金值', abs(huber - 0.095) < 1e-15, repr(huber)),
        _check('总损失黄金值', abs(total - 1.1) < 1e-12, repr(total)),
    ]


def check_hungarian(rng, trials=500):
    failures = 0
    for _ in range(trials):
        n, m = (int(v) for v in rng.integers(1, 8, size=2))
        cost = rng.integers(0, 100, size=(n, m)).astype(float)
        pairs = hungarian(cost)
        if len(pairs) != min(n, m) or abs(assignment_cost(cost, pairs) - brute_force_min_cost(cost)) > 1e-9:
            failures += 1

    forbidden_failures = 0
    for _ in range(200):
        n, m = (int(v) for v in rng.integers(1, 6, size=2))
        cost = rng.integers(0, 20, size=(n, m)).astype(float)
        forbidden = rng.random((n, m)) < 0.4
        pairs = hungarian(cost, forbidden)
        size, best = brute_force_partial(cost, forbidden)
        if (any(forbidden[r, c] for r, c in pairs) or len(pairs) != size
                or abs(assignment_cost(cost, pairs) - best) > 1e-9):
            forbidden_failures += 1

    tie_failures = 0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(n, 7))
        cost = rng.integers(0, 3, size=(n, m)).astype(float)
        if hungarian(cost) != brute_force_lexicographic(cost):
            tie_failures += 1
    return [
        _check('匈牙利算法穷举对比', failures == 0, f'{trials} 次中失败 {failures} 次'),
        _check('匈牙利算法禁止项穷举对比', forbidden_failures == 0, f'200 次中失败 {forbidden_failures} 次'),
        _check('匈牙利算法并列取字典序最小', tie_failures == 0, f'200 次中失败 {tie_failures} 次'),
    ]


def check_metrics(rng, trials=200):
    results = []
    gts, hyps = clear_example()
    results.append(_check('CLEAR手工算例', abs(clear_metrics(gts, hyps).mota - 0.5) < 1e-12))
    gts, hyps = split_identity_example()
    results.append(_check('IDF1手工算例', abs(idf1(gts, hyps).idf1 - 0.5) < 1e-12))
    dets, gts = ranked_fp_example()
    results.append(_check('AP手工算例', abs(average_precision(dets, gts) - 0.5) < 1e-12))

    failures = 0
    for _ in range(trials):
        gts, hyps = random_small_scenario(rng)
        clear = clear_metrics(gts, hyps)
        mota, fp, fn, idsw = brute_force_clear(gts, hyps)
        same_mota = (math.isnan(mota) and math.isnan(clear.mota)) or abs(mota - clear.mota) < 1e-9
        same_idf1 = abs(brute_force_idf1(gts, hyps) - idf1(gts, hyps).idf1) < 1e-9
        if not (same_mota and (fp, fn, idsw) == (clear.fp, clear.fn, clear.idsw) and same_idf1):
            failures += 1
    results.append(_check('评测指标穷举对比', failures == 0, f'{trials} 个场景中失败 {failures} 个'))
    return results


def check_postprocess(rng, frames=200):
    cfg = PostprocessConfig()
    bad = 0
    for _ in range(frames):
        n = int(rng.integers(0, 150))
        xy = rng.uniform(0, 200, size=(n, 2))
        wh = rng.uniform(5, 40, size=(n, 2))
        dets = [ScoredDetection(Box(x, y, x + w, y + h), float(s))
                for (x, y), (w, h), s in zip(xy, wh, rng.uniform(0, 1, size=n))]
        kept = postprocess(dets, cfg)
        ious = iou_matrix([d.box for d in kept], [d.box for d in kept])
        np.fill_diagonal(ious, 0.0)
        if len(kept) > cfg.max_detections or (ious.size and ious.max() > cfg.nms_iou):
            bad += 1
    return [_check('后处理不变量', bad == 0, f'{frames} 帧中违反 {bad} 帧')]


def run_selftest(seed=0):
    """
    运行全部自检

    返回:
        CheckResult 列表
    """
    rng = np.random.default_rng(seed)
    results = []
    results += check_gradients(rng)
    results += check_golden_values()
    results += check_hungarian(rng)
    results += check_metrics(rng)
    results += check_postprocess(rng)
    for r in results:
        if r.passed:
            logger.info("[通过] {} {}", r.name, r.detail)
        else:
            logger.error("[失败] {} {}", r.name, r.detail)
    return results
