"""Versioned plain-text model files.

Layout (floats written with ``repr`` so they round-trip exactly)::

    smm-model 1
    schema
    A : discrete(a0,a1)
    X : continuous
    end
    mixture density 2
    component 0.75 bayesnet
    tree A
    leaf multinomial 1.0 0.25 0.75
    tree X
    split A eq 0
    leaf gaussian 0.0 1.0
    leaf gaussian 2.5 0.5
    component 0.25 bayesnet
    ...

Trees are written in pre-order, the ``true`` branch before the ``false``
one. ``split V eq k`` tests a state index, ``split V lt t`` a threshold.
``leaf multinomial`` lists the smoothing constant then the probabilities.
Classification mixtures use ``component <w> tree`` with a single tree.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bayesnet import BayesNetComponent
from .data import DataError, Schema, parse_schema_lines
from .mixture import StagedMixture
from .tree import Branch, Gaussian, Leaf, Multinomial, Split, TreeModel

MAGIC = "smm-model"
VERSION = 1


def _write_tree(tree: TreeModel, out: list[str]) -> None:
    names = tree.schema.names
    out.append(f"tree {names[tree.target]}")

    def walk(node):
        if isinstance(node, Leaf):
            d = node.dist
            if isinstance(d, Multinomial):
                probs = " ".join(repr(float(p)) for p in d.probs)
                out.append(f"leaf multinomial {float(d.alpha)!r} {probs}")
            else:
                out.append(f"leaf gaussian {float(d.mean)!r} {float(d.var)!r}")
            return
        s = node.split
        if s.state is not None:
            out.append(f"split {names[s.var]} eq {s.state}")
        else:
            out.append(f"split {names[s.var]} lt {float(s.threshold)!r}")
        walk(node.true)
        walk(node.false)

    walk(tree.root)


def dumps(m: StagedMixture) -> str:
    out = [f"{MAGIC} {VERSION}", "schema"]
    out.extend(m.schema.to_text().splitlines())
    out.append("end")
    out.append(f"mixture {m.task} {m.n_components}")
    for w, c in zip(m.weights, m.components):
        if isinstance(c, TreeModel):
            out.append(f"component {float(w)!r} tree")
            _write_tree(c, out)
        else:
            out.append(f"component {float(w)!r} bayesnet")
            for t in c.trees:
                _write_tree(t, out)
    return "\n".join(out) + "\n"


def save_model(m: StagedMixture, path: str | Path) -> None:
    Path(path).write_text(dumps(m), encoding="utf-8")


class _Lines:
    def __init__(self, text: str, source: str):
        self.lines = [l.strip() for l in text.splitlines()]
        self.pos = 0
        self.source = source

    def next(self) -> list[str]:
        while self.pos < len(self.lines) and not self.lines[self.pos]:
            self.pos += 1
        if self.pos >= len(self.lines):
            raise self.error("unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def error(self, msg: str) -> DataError:
        return DataError(f"{self.source}:{self.pos}: {msg}")


def _read_tree(lines: _Lines, schema: Schema) -> TreeModel:
    tok = lines.next()
    if tok[:1] != ["tree"] or len(tok) != 2:
        raise lines.error("expected 'tree <variable>'")
    target = schema.index(tok[1])

    def node():
        tok = lines.next()
        if tok[0] == "leaf":
            if tok[1] == "multinomial":
                return Leaf(Multinomial(np.array([float(x) for x in tok[3:]]), float(tok[2])))
            if tok[1] == "gaussian":
                return Leaf(Gaussian(float(tok[2]), float(tok[3])))
            raise lines.error(f"unknown leaf kind {tok[1]!r}")
        if tok[0] == "split" and len(tok) == 4:
            var = schema.index(tok[1])
            if tok[2] == "eq":
                split = Split(var, state=int(tok[3]))
            elif tok[2] == "lt":
                split = Split(var, threshold=float(tok[3]))
            else:
                raise lines.error(f"unknown split test {tok[2]!r}")
            t = node()
            f = node()
            return Branch(split, t, f)
        raise lines.error(f"expected 'leaf' or 'split', got {' '.join(tok)!r}")

    return TreeModel(schema, target, node())


def loads(text: str, source: str = "<model>") -> StagedMixture:
    lines = _Lines(text, source)
    head = lines.next()
    if head != [MAGIC, str(VERSION)]:
        raise lines.error(f"not a version-{VERSION} model file")
    if lines.next() != ["schema"]:
        raise lines.error("expected 'schema'")
    start = lines.pos
    while lines.next() != ["end"]:
        pass
    schema = parse_schema_lines(lines.lines[start: lines.pos - 1], source)
    tok = lines.next()
    if tok[0] != "mixture" or len(tok) != 3:
        raise lines.error("expected 'mixture <task> <n>'")
    n = int(tok[2])
    weights, comps = [], []
    for _ in range(n):
        tok = lines.next()
        if tok[0] != "component" or len(tok) != 3:
            raise lines.error("expected 'component <weight> <kind>'")
        weights.append(float(tok[1]))
        if tok[2] == "tree":
            comps.append(_read_tree(lines, schema))
        elif tok[2] == "bayesnet":
            trees = [_read_tree(lines, schema) for _ in range(schema.arity)]
            trees.sort(key=lambda t: t.target)
            try:
                comps.append(BayesNetComponent(schema, trees))
            except ValueError as exc:
                raise lines.error(str(exc)) from None
        else:
            raise lines.error(f"unknown component kind {tok[2]!r}")
    return StagedMixture(schema, comps, weights)


def load_model(path: str | Path) -> StagedMixture:
    return loads(Path(path).read_text(encoding="utf-8"), str(path))
