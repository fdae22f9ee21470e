"""Regression-tree structures shared by the hard and soft ensembles.

This module is the readable reference implementation of split evaluation,
structural proposal moves and the depth-regularizing prior. The MCMC inner
loops in ``_kernels`` re-implement the same semantics on flat arrays for
speed; tests hold the two in agreement.

Conventions (the underlying papers leave these open):
  * soft gates are logistic in (c - x) / tau, so P(left) -> 1 as x drops
    below the cut;
  * discrete splits stay hard in soft mode;
  * continuous cuts come from a per-variable population cutpoint grid,
    discrete splits use a uniformly random nonempty proper level subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FinpopError

MOVE_KINDS = ("grow", "prune", "change", "swap")
DEFAULT_MOVE_PROBS = (0.25, 0.25, 0.40, 0.10)


@dataclass(frozen=True)
class SplitRule:
    """Axis-aligned split: continuous (cut) or discrete (left level set)."""

    var: int
    cut: float | None = None
    left_levels: frozenset | None = None

    def __post_init__(self):
        if (self.cut is None) == (self.left_levels is None):
            raise FinpopError("rule must set exactly one of cut / left_levels")
        if self.left_levels is not None and not self.left_levels:
            raise FinpopError("discrete left set must be nonempty")

    @property
    def discrete(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, x) -> bool:
        v = x[self.var]
        if self.discrete:
            return int(v) in self.left_levels
        return v <= self.cut

    def p_left(self, x, tau: float) -> float:
        if self.discrete:
            return 1.0 if int(x[self.var]) in self.left_levels else 0.0
        z = (self.cut - x[self.var]) / tau
        if z > 36:
            return 1.0
        if z < -36:
            return 0.0
        return 1.0 / (1.0 + math.exp(-z))


@dataclass
class Node:
    depth: int
    rule: SplitRule | None = None
    mu: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.rule is None


class Tree:
    """A proper binary tree; every internal node has exactly two children."""

    def __init__(self, root: Node | None = None):
        self.root = root if root is not None else Node(depth=0)
        self._check(self.root)

    def _check(self, node):
        if node.is_leaf:
            if node.left is not None or node.right is not None:
                raise FinpopError("leaf with children")
        else:
            if node.left is None or node.right is None:
                raise FinpopError("internal node missing a child")
            self._check(node.left)
            self._check(node.right)

    def nodes(self):
        out, stack = [], [self.root]
        while stack:
            nd = stack.pop()
            out.append(nd)
            if not nd.is_leaf:
                stack.extend((nd.right, nd.left))
        return out

    def leaves(self):
        return [nd for nd in self.nodes() if nd.is_leaf]

    def internal(self):
        return [nd for nd in self.nodes() if not nd.is_leaf]

    def nog_nodes(self):
        """Internal nodes whose both children are leaves (prunable)."""
        return [nd for nd in self.internal() if nd.left.is_leaf and nd.right.is_leaf]

    def parent_child_internal_pairs(self):
        out = []
        for nd in self.internal():
            for ch in (nd.left, nd.right):
                if not ch.is_leaf:
                    out.append((nd, ch))
        return out

    def copy(self) -> "Tree":
        def rec(nd):
            return Node(depth=nd.depth, rule=nd.rule, mu=nd.mu,
                        left=rec(nd.left) if nd.left else None,
                        right=rec(nd.right) if nd.right else None)
        return Tree(rec(self.root))

    def to_text(self) -> str:
        """Human-readable nested dump for golden tests; not a stable format."""
        lines = []

        def rec(nd, indent):
            pad = "  " * indent
            if nd.is_leaf:
                lines.append("%sleaf mu=%.6g" % (pad, nd.mu))
            else:
                r = nd.rule
                desc = ("x%d in %s" % (r.var, sorted(r.left_levels))
                        if r.discrete else "x%d <= %.6g" % (r.var, r.cut))
                lines.append("%ssplit %s" % (pad, desc))
                rec(nd.left, indent + 1)
                rec(nd.right, indent + 1)

        rec(self.root, 0)
        return "\n".join(lines)


def evaluate_hard(tree: Tree, x) -> float:
    """Deterministic descent: continuous left iff x <= c, discrete left iff code in set."""
    nd = tree.root
    while not nd.is_leaf:
        nd = nd.left if nd.rule.goes_left(x) else nd.right
    return nd.mu


def leaf_weights_soft(tree: Tree, tau: float, x) -> np.ndarray:
    """Path probabilities of each leaf (in tree.leaves() order); sums to 1."""
    if tau <= 0:
        raise FinpopError("soft evaluation needs tau > 0")
    weights = {}

    def rec(nd, w):
        if nd.is_leaf:
            weights[id(nd)] = weights.get(id(nd), 0.0) + w
            return
        pl = nd.rule.p_left(x, tau)
        rec(nd.left, w * pl)
        rec(nd.right, w * (1.0 - pl))

    rec(tree.root, 1.0)
    return np.array([weights.get(id(leaf), 0.0) for leaf in tree.leaves()])


def evaluate_soft(tree: Tree, tau: float, x) -> float:
    w = leaf_weights_soft(tree, tau, x)
    return float(w @ np.array([leaf.mu for leaf in tree.leaves()]))


def log_tree_prior(tree: Tree, alpha: float, beta: float) -> float:
    """Depth-regularizing prior on topology: P(nonterminal at depth d) = alpha (1+d)^-beta."""
    if not (0 < alpha < 1) or beta < 0:
        raise FinpopError("require 0 < alpha < 1 and beta >= 0")
    total = 0.0
    for nd in tree.nodes():
        p_split = alpha * (1.0 + nd.depth) ** (-beta)
        total += math.log(1.0 - p_split) if nd.is_leaf else math.log(p_split)
    return total


@dataclass(frozen=True)
class RuleSpace:
    """Where proposal rules come from: cut grids and discrete level counts.

    ``cut_grids[j]`` is the cutpoint grid for continuous variable j (eval
    order indexes the full covariate vector); ``n_levels[j] > 0`` marks a
    discrete variable with that many category codes.
    """

    cut_grids: dict
    n_levels: dict
    split_probs: np.ndarray  # simplex over covariates

    def n_rules(self, var: int) -> int:
        L = self.n_levels.get(var, 0)
        if L:
            return 2 ** L - 2
        return len(self.cut_grids[var])

    def draw_rule(self, rng) -> tuple[SplitRule, float]:
        """Draw (rule, log prior prob of the rule)."""
        var = int(rng.choice(len(self.split_probs), p=self.split_probs))
        logp = math.log(self.split_probs[var])
        L = self.n_levels.get(var, 0)
        if L:
            mask = int(rng.integers(1, 2 ** L - 1))
            levels = frozenset(k for k in range(L) if mask >> k & 1)
            rule = SplitRule(var=var, left_levels=levels)
        else:
            grid = self.cut_grids[var]
            rule = SplitRule(var=var, cut=float(grid[rng.integers(0, len(grid))]))
        return rule, logp - math.log(self.n_rules(var))

    def log_rule_prob(self, rule: SplitRule) -> float:
        return math.log(self.split_probs[rule.var]) - math.log(self.n_rules(rule.var))


@dataclass(frozen=True)
class Move:
    """A proposed structural edit plus the MH proposal bookkeeping."""

    kind: str
    tree: Tree
    log_forward: float  # log q(T -> T')
    log_reverse: float  # log q(T' -> T)


class InapplicableMove(FinpopError):
    """The requested move kind cannot be applied to this tree."""


def _applicable_mass(tree: Tree, probs) -> float:
    mass = 0.0
    if tree.leaves():
        mass += probs[0]
    if tree.nog_nodes():
        mass += probs[1]
    if tree.internal():
        mass += probs[2]
    if tree.parent_child_internal_pairs():
        mass += probs[3]
    return mass


def propose_move(tree: Tree, kind: str, rng, space: RuleSpace,
                 move_probs=DEFAULT_MOVE_PROBS) -> Move:
    """One structural edit (grow/prune/change/swap) with forward/reverse log
    proposal probabilities under the resample-until-applicable kind scheme."""
    probs = dict(zip(MOVE_KINDS, move_probs))
    new = tree.copy()
    mass = _applicable_mass(tree, move_probs)

    if kind == "grow":
        leaves = new.leaves()
        if not leaves:
            raise InapplicableMove("no growable leaf")
        leaf = leaves[rng.integers(0, len(leaves))]
        rule, log_rule = space.draw_rule(rng)
        leaf.rule = rule
        leaf.left = Node(depth=leaf.depth + 1)
        leaf.right = Node(depth=leaf.depth + 1)
        log_fwd = math.log(probs["grow"] / mass) - math.log(len(leaves)) + log_rule
        log_rev = math.log(probs["prune"] / _applicable_mass(new, move_probs)) \
            - math.log(len(new.nog_nodes()))
    elif kind == "prune":
        nog = new.nog_nodes()
        if not nog:
            raise InapplicableMove("no prunable node")
        k = rng.integers(0, len(nog))
        node = nog[k]
        log_rule = space.log_rule_prob(node.rule)
        node.rule, node.left, node.right = None, None, None
        log_fwd = math.log(probs["prune"] / mass) - math.log(len(nog))
        log_rev = math.log(probs["grow"] / _applicable_mass(new, move_probs)) \
            - math.log(len(new.leaves())) + log_rule
    elif kind == "change":
        internal = new.internal()
        if not internal:
            raise InapplicableMove("no internal node to change")
        node = internal[rng.integers(0, len(internal))]
        old_rule = node.rule
        rule, log_rule = space.draw_rule(rng)
        node.rule = rule
        log_fwd = math.log(probs["change"] / mass) - math.log(len(internal)) + log_rule
        log_rev = math.log(probs["change"] / _applicable_mass(new, move_probs)) \
            - math.log(len(new.internal())) + space.log_rule_prob(old_rule)
    elif kind == "swap":
        pairs = new.parent_child_internal_pairs()
        if not pairs:
            raise InapplicableMove("no parent-child internal pair")
        parent, child = pairs[rng.integers(0, len(pairs))]
        parent.rule, child.rule = child.rule, parent.rule
        log_fwd = math.log(probs["swap"] / mass) - math.log(len(pairs))
        log_rev = math.log(probs["swap"] / _applicable_mass(new, move_probs)) \
            - math.log(len(new.parent_child_internal_pairs()))
    else:
        raise FinpopError("unknown move kind %r" % kind)
    return Move(kind=kind, tree=new, log_forward=log_fwd, log_reverse=log_rev)
