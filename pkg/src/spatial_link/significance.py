"""Permutation-null significance testing of candidate linkage paths.

The null model holds path geometry fixed and permutes field values among
the valid cells of each field independently, recomputing each path's
coherence score per replicate. Replicate seeds derive from a single base
seed through a pure function of the replicate index, so results are
independent of evaluation order and thread count. The reported p-value
uses the add-one estimator (1 + #{null >= observed}) / (1 + M), which is
never zero and is exact under the discrete permutation distribution.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import KIND_SOURCE, LOSS_NEGATIVE, LOSS_POSITIVE, ChangeGrid
from .graph import VARIANT_CMAD, VARIANT_STANDARD, SpatialGraph
from .paths import LinkagePath

DEFAULT_REPLICATES = 999
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class SeedPolicy:
    """Pure derivation of per-replicate random streams from one base seed.

    Replicate ``i`` uses the child sequence of ``base_seed`` with spawn key
    ``(i,)``, so any subset of replicates can be generated in any order,
    on any thread, with identical results.
    """

    base_seed: int

    def replicate_sequence(self, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.base_seed, spawn_key=(index,))

    def generator(self, index: int) -> np.random.Generator:
        return np.random.default_rng(self.replicate_sequence(index))


@dataclass(frozen=True)
class NullDistribution:
    """Replicate scores of one path under the permutation null."""

    scores: np.ndarray
    base_seed: int

    @property
    def n_replicates(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class SignificanceResult:
    path: LinkagePath
    observed: float
    p_value: float
    significant: bool
    alpha: float


def permute_fields(
    source: ChangeGrid, target: ChangeGrid, seed
) -> tuple[ChangeGrid, ChangeGrid]:
    """One null replicate: permute each field's values among its valid cells.

    ``seed`` may be an int, a SeedSequence, or a Generator. The source
    field is permuted first, then the target field, from the same stream;
    invalid cells are untouched. Each field's permutation is independent
    of the other's values.
    """
    g = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for grid in (source, target):
        vals = grid.values.copy()
        pool = vals[grid.valid_mask]
        vals[grid.valid_mask] = pool[g.permutation(len(pool))]
        out.append(ChangeGrid(values=vals, valid_mask=grid.valid_mask, registration=grid.registration))
    return out[0], out[1]


def p_value(observed: float, null_scores: np.ndarray) -> float:
    """Add-one upper-tail p-value of an observed score against null scores."""
    null_scores = np.asarray(null_scores)
    if null_scores.size == 0:
        raise ValueError("p_value requires at least one null replicate")
    return float((1 + np.count_nonzero(null_scores >= observed)) / (1 + null_scores.size))


def benjamini_hochberg(p_values, alpha: float) -> np.ndarray:
    """Step-up false discovery rate decisions at level alpha."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    below = ranked <= (np.arange(1, m + 1) / m) * alpha
    decisions = np.zeros(m, dtype=bool)
    if below.any():
        k = int(np.nonzero(below)[0][-1])
        decisions[order[: k + 1]] = True
    return decisions


def filter_significant(results: list[SignificanceResult]) -> list[SignificanceResult]:
    return [r for r in results if r.significant]


class PermutationNull:
    """Vectorized permutation-null engine over a batch of paths.

    One replicate draws a fresh permutation of each value pool (source
    field first, target field second, from the replicate's generator) and
    rescores every path against the permuted values. Scores are exact
    fractions k / n_edges, so comparing a null score against an observed
    score of the same path is an exact integer comparison in disguise.
    """

    def __init__(
        self,
        *,
        pools: list[np.ndarray],
        node_pool: np.ndarray,
        node_pos: np.ndarray,
        policy: SeedPolicy,
        n_replicates: int = DEFAULT_REPLICATES,
        threads: int = 1,
        variant: str = VARIANT_STANDARD,
        bits: np.ndarray | None = None,
        target_interval: tuple[float, float] | None = None,
        target_orientation: str | None = None,
        threshold: float | None = None,
    ):
        if n_replicates < 1:
            raise ValueError("n_replicates must be at least 1")
        self.pools = [np.asarray(p, dtype=np.float64) for p in pools]
        self.node_pool = np.asarray(node_pool, dtype=np.int64)
        self.node_pos = np.asarray(node_pos, dtype=np.int64)
        self.policy = policy
        self.n_replicates = int(n_replicates)
        self.threads = max(1, int(threads))
        self.variant = variant
        self.bits = None if bits is None else np.asarray(bits, dtype=bool)
        self.target_interval = target_interval
        self.target_orientation = target_orientation
        self.threshold = threshold

    # -- constructors ---------------------------------------------------

    @classmethod
    def for_graph(
        cls,
        graph: SpatialGraph,
        source: ChangeGrid,
        target: ChangeGrid,
        policy: SeedPolicy,
        n_replicates: int = DEFAULT_REPLICATES,
        threads: int = 1,
        anomaly_mask: np.ndarray | None = None,
    ) -> "PermutationNull":
        """Engine for a graph built over two change fields.

        The grids must be the same (already cropped) fields the graph was
        built from. Under the ``cmad`` variant the graph params must carry
        the target band interval and orientation, and the anomaly mask
        must be supplied so its bits can be permuted alongside the source
        values.
        """
        variant = graph.params.get("variant", VARIANT_STANDARD)
        src_pos = np.full(source.shape, -1, dtype=np.int64)
        src_pos[source.valid_mask] = np.arange(int(source.valid_mask.sum()))
        tgt_pos = np.full(target.shape, -1, dtype=np.int64)
        tgt_pos[target.valid_mask] = np.arange(int(target.valid_mask.sum()))

        node_pool = np.zeros(graph.n_nodes, dtype=np.int64)
        node_pos = np.zeros(graph.n_nodes, dtype=np.int64)
        for n in graph.nodes:
            if n.kind == KIND_SOURCE:
                node_pool[n.id] = 0
                node_pos[n.id] = src_pos[n.row, n.col]
            else:
                node_pool[n.id] = 1
                node_pos[n.id] = tgt_pos[n.row, n.col]
        if (node_pos < 0).any():
            raise ValueError("graph node on an invalid cell; grids do not match the graph")

        kwargs: dict = {}
        if variant == VARIANT_CMAD:
            if anomaly_mask is None:
                raise ValueError("cmad variant requires the anomaly mask")
            mask = np.asarray(anomaly_mask, dtype=bool)
            if mask.shape != source.shape:
                raise ValueError(
                    f"anomaly mask shape {mask.shape} does not match grid shape {source.shape}"
                )
            interval = graph.params.get("target_interval")
            orientation = graph.params.get("orientation_target")
            if interval is None or orientation is None:
                raise ValueError(
                    "cmad graph params must record target_interval and orientation_target"
                )
            kwargs = {
                "bits": mask[source.valid_mask],
                "target_interval": (float(interval[0]), float(interval[1])),
                "target_orientation": orientation,
            }

        return cls(
            pools=[source.values[source.valid_mask], target.values[target.valid_mask]],
            node_pool=node_pool,
            node_pos=node_pos,
            policy=policy,
            n_replicates=n_replicates,
            threads=threads,
            variant=variant,
            **kwargs,
        )

    @classmethod
    def for_point_field(
        cls,
        values_grid: ChangeGrid,
        cells: list[tuple[int, int]],
        threshold: float,
        policy: SeedPolicy,
        n_replicates: int = DEFAULT_REPLICATES,
        threads: int = 1,
    ) -> "PermutationNull":
        """Engine for a single-field point graph scored by a threshold rule.

        ``cells[i]`` is the grid cell of node i. The permutation pool is
        every valid cell of the field, not just the point cells, so a null
        replicate can place sub-threshold values onto the path.
        """
        pos_grid = np.full(values_grid.shape, -1, dtype=np.int64)
        pos_grid[values_grid.valid_mask] = np.arange(int(values_grid.valid_mask.sum()))
        node_pos = np.asarray([pos_grid[r, c] for r, c in cells], dtype=np.int64)
        if (node_pos < 0).any():
            raise ValueError("point cell lies on an invalid cell of the value field")
        n = len(cells)
        return cls(
            pools=[values_grid.values[values_grid.valid_mask]],
            node_pool=np.zeros(n, dtype=np.int64),
            node_pos=node_pos,
            policy=policy,
            n_replicates=n_replicates,
            threads=threads,
            variant="threshold",
            threshold=float(threshold),
        )

    # -- scoring --------------------------------------------------------

    def _layout(self, paths: list[LinkagePath]):
        n_paths = len(paths)
        width = max(p.n_nodes for p in paths)
        pos_a = np.zeros((n_paths, width), dtype=np.int64)
        pos_b = np.zeros((n_paths, width), dtype=np.int64)
        in_a = np.zeros((n_paths, width), dtype=bool)
        edge_valid = np.zeros((n_paths, width - 1), dtype=bool)
        n_edges = np.zeros(n_paths, dtype=np.int64)
        for k, path in enumerate(paths):
            ids = np.asarray(path.nodes, dtype=np.int64)
            m = len(ids)
            pools = self.node_pool[ids]
            posns = self.node_pos[ids]
            in_a[k, :m] = pools == 0
            pos_a[k, :m] = np.where(pools == 0, posns, 0)
            pos_b[k, :m] = np.where(pools == 0, 0, posns)
            edge_valid[k, : m - 1] = True
            n_edges[k] = m - 1
        return pos_a, pos_b, in_a, edge_valid, n_edges

    def _replicate_values(self, index: int) -> tuple[list[np.ndarray], np.ndarray | None]:
        g = self.policy.generator(index)
        permuted = []
        bits_perm = None
        for pool_id, pool in enumerate(self.pools):
            perm = g.permutation(len(pool))
            permuted.append(pool[perm])
            if pool_id == 0 and self.bits is not None:
                # Mask bits travel with their cells under the permutation.
                bits_perm = self.bits[perm]
        return permuted, bits_perm

    def _condition(self, vals: np.ndarray, in_a: np.ndarray, bits_at: np.ndarray | None) -> np.ndarray:
        """Per-position qualification used by the cmad and threshold rules."""
        if self.variant == VARIANT_CMAD:
            lo, hi = self.target_interval
            mags = np.abs(vals)
            if self.target_orientation == LOSS_NEGATIVE:
                oriented = vals < 0
            elif self.target_orientation == LOSS_POSITIVE:
                oriented = vals > 0
            else:
                raise ValueError(f"unknown orientation {self.target_orientation!r}")
            in_band = oriented & (mags >= lo) & (mags < hi)
            return np.where(in_a, bits_at, in_band)
        if self.variant == "threshold":
            return vals >= self.threshold
        raise ValueError(f"variant {self.variant!r} has no condition rule")

    def _scores_for_replicate(
        self,
        index: int,
        pos_a: np.ndarray,
        pos_b: np.ndarray,
        in_a: np.ndarray,
        edge_valid: np.ndarray,
        n_edges: np.ndarray,
    ) -> np.ndarray:
        permuted, bits_perm = self._replicate_values(index)
        if len(self.pools) == 1:
            vals = permuted[0][pos_a]
        else:
            vals = np.where(in_a, permuted[0][pos_a], permuted[1][pos_b])
        if self.variant == VARIANT_STANDARD:
            sg = np.sign(vals)
            ok = (sg[:, 1:] == sg[:, :-1]) & edge_valid
        else:
            bits_at = bits_perm[pos_a] if bits_perm is not None else None
            cond = self._condition(vals, in_a, bits_at)
            ok = cond[:, 1:] & cond[:, :-1] & edge_valid
        return ok.sum(axis=1) / n_edges

    def _run(self, paths: list[LinkagePath], collect: bool):
        """Count exceedances per path; optionally keep all replicate scores."""
        pos_a, pos_b, in_a, edge_valid, n_edges = self._layout(paths)
        observed = np.asarray([p.score for p in paths], dtype=np.float64)
        m = self.n_replicates
        scores_out = np.zeros((len(paths), m), dtype=np.float64) if collect else None

        def run_block(indices: range) -> np.ndarray:
            ge = np.zeros(len(paths), dtype=np.int64)
            for i in indices:
                scores = self._scores_for_replicate(i, pos_a, pos_b, in_a, edge_valid, n_edges)
                ge += scores >= observed
                if scores_out is not None:
                    scores_out[:, i] = scores
            return ge

        if self.threads > 1 and m > 1:
            step = -(-m // self.threads)
            blocks = [range(s, min(s + step, m)) for s in range(0, m, step)]
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                counts = list(pool.map(run_block, blocks))
            ge_total = np.sum(counts, axis=0)
        else:
            ge_total = run_block(range(m))
        return ge_total, observed, scores_out

    def null_scores(self, path: LinkagePath) -> NullDistribution:
        """Full null score vector of one path, replicate by replicate."""
        _, _, scores = self._run([path], collect=True)
        return NullDistribution(scores=scores[0], base_seed=self.policy.base_seed)

    def evaluate(
        self,
        paths: list[LinkagePath],
        alpha: float = DEFAULT_ALPHA,
        share_null_by_length: bool = False,
        bh_correction: bool = False,
    ) -> list[SignificanceResult]:
        """Score a batch of paths and decide significance at level alpha.

        With ``share_null_by_length`` the null distribution is computed
        once per path length (using the first path of that length) and
        reused for all equal-length paths, which is a valid shortcut
        because under value permutation the null score law of a path
        depends on the path only through its length and node composition.
        """
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if not paths:
            return []

        if share_null_by_length:
            reps: dict[int, int] = {}
            for k, path in enumerate(paths):
                reps.setdefault(path.n_nodes, k)
            rep_paths = [paths[k] for k in sorted(reps.values())]
            _, _, rep_scores = self._run(rep_paths, collect=True)
            null_by_len = {p.n_nodes: rep_scores[j] for j, p in enumerate(rep_paths)}
            pvals = np.asarray(
                [p_value(path.score, null_by_len[path.n_nodes]) for path in paths]
            )
        else:
            ge, observed, _ = self._run(paths, collect=False)
            pvals = (1 + ge) / (1 + self.n_replicates)

        if bh_correction:
            decisions = benjamini_hochberg(pvals, alpha)
        else:
            decisions = pvals < alpha
        return [
            SignificanceResult(
                path=path,
                observed=float(path.score),
                p_value=float(pv),
                significant=bool(sig),
                alpha=float(alpha),
            )
            for path, pv, sig in zip(paths, pvals, decisions)
        ]
