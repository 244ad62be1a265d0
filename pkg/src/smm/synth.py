"""Synthetic data from product-form mixtures with exactly known density.

Spec files extend the schema grammar with a components section::

    A : discrete(a0,a1)
    X : continuous
    components
    component 0.6
    A = 0.9,0.1
    X = normal(0.0,1.0)
    component 0.4
    A = 0.2,0.8
    X = normal(3.0,0.5)

``normal(mean,variance)`` parameterises continuous variables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DataError, Schema, Variable, parse_schema_lines

_NORMAL_RE = re.compile(r"normal\(\s*([^,]+),\s*([^)]+)\)")


@dataclass(frozen=True, eq=False)
class GenerativeSpec:
    """Mixture of product distributions.

    ``components[c][v]`` is a probability vector for a discrete variable or
    a ``(mean, variance)`` pair for a continuous one.
    """

    schema: Schema
    weights: np.ndarray
    components: tuple
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != len(self.components) or len(w) == 0:
            raise DataError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("component weights must sum to 1")
        comps = []
        for c in self.components:
            if len(c) != self.schema.arity:
                raise DataError("each component needs one distribution per variable")
            params = []
            for var, p in zip(self.schema.variables, c):
                if var.is_discrete:
                    p = np.asarray(p, dtype=np.float64)
                    if p.shape != (var.n_states,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                        raise DataError(f"bad probabilities for {var.name!r}: {p}")
                    params.append(p / p.sum())
                else:
                    mean, var_ = (float(x) for x in p)
                    if not var_ > 0 or not math.isfinite(mean):
                        raise DataError(f"bad normal parameters for {var.name!r}")
                    params.append((mean, var_))
            comps.append(tuple(params))
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "components", tuple(comps))


def sample(spec: GenerativeSpec, n: int, seed: int | None = None) -> Dataset:
    """Draw ``n`` i.i.d. cases with numpy's PCG64 generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    z = rng.choice(len(spec.weights), size=n, p=spec.weights)
    out = np.empty((n, spec.schema.arity))
    for j, var in enumerate(spec.schema.variables):
        u = rng.random(n) if var.is_discrete else rng.standard_normal(n)
        for c, comp in enumerate(spec.components):
            rows = z == c
            if var.is_discrete:
                cdf = np.cumsum(comp[j])
                cdf[-1] = 1.0
                out[rows, j] = np.searchsorted(cdf, u[rows], side="right")
            else:
                mean, var_ = comp[j]
                out[rows, j] = mean + math.sqrt(var_) * u[rows]
    return Dataset(spec.schema, out)


def component_log_densities(spec: GenerativeSpec, values) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    out = np.zeros((len(values), len(spec.components)))
    for c, comp in enumerate(spec.components):
        for j, var in enumerate(spec.schema.variables):
            col = values[:, j]
            if var.is_discrete:
                with np.errstate(divide="ignore"):
                    out[:, c] += np.log(comp[j])[col.astype(np.intp)]
            else:
                mean, var_ = comp[j]
                out[:, c] += -0.5 * (math.log(2 * math.pi * var_) + (col - mean) ** 2 / var_)
    return out


def true_log_density(spec: GenerativeSpec, values) -> np.ndarray:
    """Exact log-density of each row under the generative mixture."""
    lp = component_log_densities(spec, values)
    with np.errstate(divide="ignore"):
        lp = lp + np.log(spec.weights)[None, :]
    m = lp.max(axis=1)
    return m + np.log(np.exp(lp - m[:, None]).sum(axis=1))


def to_mixture(spec: GenerativeSpec):
    """The spec as a StagedMixture of single-leaf Bayesian networks."""
    from .bayesnet import BayesNetComponent
    from .mixture import StagedMixture
    from .tree import Gaussian, Leaf, Multinomial, TreeModel

    comps = []
    for comp in spec.components:
        trees = []
        for j, var in enumerate(spec.schema.variables):
            dist = Multinomial(comp[j]) if var.is_discrete else Gaussian(*comp[j])
            trees.append(TreeModel(spec.schema, j, Leaf(dist)))
        comps.append(BayesNetComponent(spec.schema, trees))
    return StagedMixture(spec.schema, comps, spec.weights)


def random_product_spec(
    n_vars: int = 8,
    n_states: int = 3,
    n_components: int = 3,
    concentration: float = 0.9,
    seed: int = 0,
) -> GenerativeSpec:
    """Well-separated discrete mixture: each component puts ``concentration``
    mass on one preferred state per variable, preferred states drawn at
    random per component."""
    rng = np.random.default_rng(seed)
    states = tuple(f"s{k}" for k in range(n_states))
    schema = Schema(tuple(Variable(f"V{j}", states) for j in range(n_vars)))
    comps = []
    for _ in range(n_components):
        params = []
        for _ in range(n_vars):
            p = np.full(n_states, (1.0 - concentration) / (n_states - 1))
            p[rng.integers(n_states)] = concentration
            params.append(p)
        comps.append(params)
    w = rng.dirichlet(np.full(n_components, 5.0))
    return GenerativeSpec(schema, w, tuple(comps), seed)


def parse_spec(text: str, source: str = "<spec>", seed: int = 0) -> GenerativeSpec:
    lines = text.splitlines()
    try:
        split_at = next(i for i, l in enumerate(lines) if l.strip() == "components")
    except StopIteration:
        raise DataError(f"{source}: missing 'components' section") from None
    schema = parse_schema_lines(lines[:split_at], source)
    weights: list[float] = []
    comps: list[dict] = []
    for lineno, raw in enumerate(lines[split_at + 1:], split_at + 2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("component"):
            weights.append(float(line.split()[1]))
            comps.append({})
            continue
        if not comps or "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'component <weight>' or 'name = params'")
        name, rhs = (p.strip() for p in line.split("=", 1))
        j = schema.index(name)
        if schema[j].is_discrete:
            comps[-1][j] = [float(x) for x in rhs.split(",")]
        else:
            m = _NORMAL_RE.fullmatch(rhs)
            if m is None:
                raise DataError(f"{source}:{lineno}: expected normal(mean,variance)")
            comps[-1][j] = (float(m.group(1)), float(m.group(2)))
    params = []
    for c, comp in enumerate(comps):
        missing = [schema[j].name for j in range(schema.arity) if j not in comp]
        if missing:
            raise DataError(f"{source}: component {c + 1} lacks {missing}")
        params.append([comp[j] for j in range(schema.arity)])
    return GenerativeSpec(schema, np.array(weights), tuple(params), seed)


def load_spec(path: str | Path, seed: int = 0) -> GenerativeSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"), str(path), seed)


def format_spec(spec: GenerativeSpec) -> str:
    lines = [spec.schema.to_text().rstrip("\n"), "components"]
    for w, comp in zip(spec.weights, spec.components):
        lines.append(f"component {float(w)!r}")
        for var, p in zip(spec.schema.variables, comp):
            if var.is_discrete:
                lines.append(f"{var.name} = " + ",".join(repr(float(x)) for x in p))
            else:
                lines.append(f"{var.name} = normal({p[0]!r},{p[1]!r})")
    return "\n".join(lines) + "\n"
