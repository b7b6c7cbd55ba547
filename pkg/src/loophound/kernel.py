"""Transition-system kernel: ground facts, states, rule matching and action application.

A state is a finite set of ground facts over a closed predicate vocabulary.
Action rules (parsed from the rule DSL, see :mod:`loophound.dsl`) describe
preconditions as conjunctions of literals and comparisons, and effects as
fact additions/deletions.  The kernel grounds rules against a state, checks
applicability and produces successor states.

Variables follow the Prolog convention: identifiers starting with an
uppercase letter are variables, everything else is a constant.  ``_`` is an
anonymous wildcard, only meaningful inside literals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

# ============================================================================
# Predicate vocabulary
# ============================================================================

# predicate name -> (arity, argument types)
PREDICATES: dict[str, tuple[str, ...]] = {
    "based": ("company", "country"),
    "managed": ("company", "country"),
    "isChildOf": ("company", "company"),
    "ownsIP": ("company", "ip"),
    "rentsIP": ("company", "company", "ip"),
    "exists": ("company",),
}

# transaction-pattern predicate usable in reduction conditions only
TRANSACTION_PRED = "transaction"

ACTION_NAMES = ("addChild", "rentIP", "transferIP")

WILDCARD = "_"


def is_variable(term: str) -> bool:
    return bool(term) and term != WILDCARD and (term[0].isupper())


def is_constant(term: str) -> bool:
    return bool(term) and term != WILDCARD and not term[0].isupper()


class KernelError(Exception):
    """Contract violation inside the kernel (bad fact, inapplicable action...)."""


# ============================================================================
# Facts and states
# ============================================================================


class Fact(NamedTuple):
    predicate: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.args)})"


def make_fact(predicate: str, args: Sequence[str]) -> Fact:
    """Build a validated ground fact."""
    if predicate not in PREDICATES:
        raise KernelError(f"unknown predicate: {predicate!r}")
    arity = len(PREDICATES[predicate])
    if len(args) != arity:
        raise KernelError(
            f"{predicate} expects {arity} argument(s), got {len(args)}"
        )
    for a in args:
        if not is_constant(a):
            raise KernelError(f"fact argument must be a ground constant: {a!r}")
    return Fact(predicate, tuple(args))


@dataclass(frozen=True)
class State:
    """Immutable set of ground facts plus bookkeeping for the one-shot transfer."""

    facts: frozenset[Fact]
    step_count: int = 0
    transfer_used: bool = False

    def __post_init__(self) -> None:
        _validate_facts(self.facts)

    # fact index by predicate, built lazily; frozen dataclasses still own a
    # __dict__ so cached values can be slotted in without mutation semantics
    @property
    def index(self) -> dict[str, list[tuple[str, ...]]]:
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = {p: [] for p in PREDICATES}
            for f in sorted(self.facts):
                cached[f.predicate].append(f.args)
            self.__dict__["_index"] = cached
        return cached

    def release_index(self) -> None:
        """Drop the cached fact index (rebuilt lazily on next access)."""
        self.__dict__.pop("_index", None)

    def holds(self, fact: Fact) -> bool:
        return fact in self.facts

    def companies(self) -> list[str]:
        """Existing company ids, sorted."""
        return sorted(args[0] for args in self.index["exists"])

    def key(self) -> frozenset[Fact]:
        """Deduplication key: the fact set itself."""
        return self.facts

    def __str__(self) -> str:
        return "{" + ", ".join(str(f) for f in sorted(self.facts)) + "}"


def _validate_facts(facts: Iterable[Fact]) -> None:
    owners: dict[str, str] = {}
    based: dict[str, set[str]] = {}
    managed: dict[str, set[str]] = {}
    rents: dict[str, list[tuple[str, str]]] = {}
    inbound: dict[tuple[str, str], str] = {}
    for f in facts:
        if f.predicate not in PREDICATES:
            raise KernelError(f"unknown predicate in state: {f.predicate!r}")
        if len(f.args) != len(PREDICATES[f.predicate]):
            raise KernelError(f"bad arity in state fact: {f}")
        if f.predicate == "ownsIP":
            company, ip = f.args
            if ip in owners and owners[ip] != company:
                raise KernelError(f"ip {ip!r} has more than one owner")
            owners[ip] = company
        elif f.predicate == "based":
            based.setdefault(f.args[0], set()).add(f.args[1])
        elif f.predicate == "managed":
            managed.setdefault(f.args[0], set()).add(f.args[1])
        elif f.predicate == "rentsIP":
            licensor, renter, ip = f.args
            rents.setdefault(ip, []).append((licensor, renter))
            key = (renter, ip)
            if key in inbound and inbound[key] != licensor:
                raise KernelError(
                    f"company {renter!r} rents ip {ip!r} from more than one licensor"
                )
            inbound[key] = licensor
    for company, countries in based.items():
        if len(countries) > 1:
            raise KernelError(f"company {company!r} is based in multiple countries")
    for company, countries in managed.items():
        if len(countries) > 1:
            raise KernelError(f"company {company!r} is managed from multiple countries")
    # licensing edges must stay acyclic per ip
    for ip, edges in rents.items():
        succ: dict[str, list[str]] = {}
        for licensor, renter in edges:
            succ.setdefault(licensor, []).append(renter)
        seen: set[str] = set()
        onpath: set[str] = set()

        def visit(node: str) -> None:
            if node in onpath:
                raise KernelError(f"rentsIP edges form a cycle for ip {ip!r}")
            if node in seen:
                return
            onpath.add(node)
            for nxt in succ.get(node, ()):
                visit(nxt)
            onpath.discard(node)
            seen.add(node)

        for licensor in list(succ):
            visit(licensor)


def initial_state(
    facts: Iterable[Fact], declared_companies: Iterable[str]
) -> State:
    """Initial state: declared facts plus exists() for every declared company."""
    full = set(facts)
    for c in declared_companies:
        full.add(Fact("exists", (c,)))
    return State(facts=frozenset(full), step_count=0, transfer_used=False)


# ============================================================================
# Condition language (shared with the taxation module)
# ============================================================================


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[str, ...]
    negated: bool = False

    def variables(self) -> list[str]:
        return [a for a in self.args if is_variable(a)]

    def __str__(self) -> str:
        body = f"{self.predicate}({', '.join(self.args)})"
        return f"not {body}" if self.negated else body


@dataclass(frozen=True)
class Comparison:
    left: str
    op: str  # "==" or "!="
    right: str

    def variables(self) -> list[str]:
        return [t for t in (self.left, self.right) if is_variable(t)]

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


ConditionItem = Literal | Comparison
Condition = tuple[ConditionItem, ...]


# Preprocessing results are memoized by condition identity.  Conditions are
# immutable tuples built once at parse time, so keying on id() is safe as long
# as the cache keeps the condition alive (it does: the key's condition is
# stored in the value).  Hashing the nested dataclasses on every lookup would
# dominate the match cost otherwise.
_CONDITION_CACHE: dict[int, tuple[Condition, dict]] = {}


def _condition_info(condition: Condition) -> dict:
    entry = _CONDITION_CACHE.get(id(condition))
    if entry is not None and entry[0] is condition:
        return entry[1]
    seen: dict[str, None] = {}
    for item in condition:
        for v in item.variables():
            seen.setdefault(v)
    positives = tuple(
        it for it in condition if isinstance(it, Literal) and not it.negated
    )
    deferred = tuple(
        it for it in condition if not (isinstance(it, Literal) and not it.negated)
    )
    info = {
        "variables": tuple(seen),
        "positives": positives,
        "deferred": deferred,
        "plans": tuple(_literal_plan(lit) for lit in positives),
        "positive_variables": frozenset(
            v for lit in positives for v in lit.variables()
        ),
    }
    _CONDITION_CACHE[id(condition)] = (condition, info)
    return info


def condition_variables(condition: Condition) -> list[str]:
    return list(_condition_info(condition)["variables"])


def condition_positive_variables(condition: Condition) -> frozenset[str]:
    """Variables bound by the positive literals of ``condition``."""
    return _condition_info(condition)["positive_variables"]


# per-argument match plan: ("wild" | "var" | "const", term) for each position,
# memoized on the literal instance
def _literal_plan(literal: Literal) -> tuple[tuple[str, str], ...]:
    plan = literal.__dict__.get("_plan")
    if plan is None:
        plan = []
        for arg in literal.args:
            if arg == WILDCARD:
                plan.append(("wild", arg))
            elif is_variable(arg):
                plan.append(("var", arg))
            else:
                plan.append(("const", arg))
        plan = tuple(plan)
        object.__setattr__(literal, "_plan", plan)
    return plan


def _comparison_holds(cmp_: Comparison, binding: Mapping[str, str]) -> bool:
    left = binding.get(cmp_.left, cmp_.left)
    right = binding.get(cmp_.right, cmp_.right)
    if is_variable(left) or is_variable(right):
        raise KernelError(f"comparison on unbound variable: {cmp_}")
    return (left == right) if cmp_.op == "==" else (left != right)


def _literal_matches(
    literal: Literal,
    ground: Sequence[tuple[str, ...]],
    binding: dict[str, str],
) -> Iterable[dict[str, str]]:
    """Yield extended bindings for one positive literal against ground tuples."""
    plan = _literal_plan(literal)
    for tup in ground:
        new = None
        ok = True
        for (kind, pat), val in zip(plan, tup):
            if kind == "wild":
                continue
            if kind == "var":
                if new is not None and pat in new:
                    bound = new[pat]
                else:
                    bound = binding.get(pat)
                if bound is None:
                    if new is None:
                        new = {}
                    new[pat] = val
                elif bound != val:
                    ok = False
                    break
            elif pat != val:
                ok = False
                break
        if ok:
            merged = dict(binding)
            if new:
                merged.update(new)
            yield merged


def _negated_literal_holds(
    literal: Literal,
    ground: Sequence[tuple[str, ...]],
    binding: Mapping[str, str],
) -> bool:
    """True when no ground tuple matches; wildcards are existential inside the negation."""
    plan = _literal_plan(literal)
    for tup in ground:
        ok = True
        for (kind, pat), val in zip(plan, tup):
            if kind == "wild":
                continue
            if kind == "var":
                bound = binding.get(pat)
                if bound is None:
                    raise KernelError(
                        f"unbound variable {pat!r} in negated literal {literal}"
                    )
                if bound != val:
                    ok = False
                    break
            elif pat != val:
                ok = False
                break
        if ok:
            return False
    return True


def match(
    state: State,
    condition: Condition,
    binding: Optional[Mapping[str, str]] = None,
    extra_ground: Optional[Mapping[str, Sequence[tuple[str, ...]]]] = None,
) -> list[dict[str, str]]:
    """Enumerate all bindings of ``condition`` against ``state``.

    Positive literals are matched in source order and bind variables; negated
    literals and comparisons are checked as soon as their variables are bound.
    ``extra_ground`` supplies ground tuples for predicates that do not live in
    the state (transaction patterns).  Results are sorted lexicographically by
    the values of the sorted variable names, so callers see a deterministic
    order.
    """
    seed = dict(binding) if binding else {}
    index = state.index

    def ground_for(pred: str) -> Sequence[tuple[str, ...]]:
        ground = index.get(pred)
        if ground is not None:
            return ground
        if extra_ground and pred in extra_ground:
            return extra_ground[pred]
        raise KernelError(f"unknown predicate in condition: {pred!r}")

    info = _condition_info(condition)
    positives, deferred = info["positives"], info["deferred"]

    def checks_pass(b: dict[str, str]) -> bool:
        for item in deferred:
            if isinstance(item, Comparison):
                if not _comparison_holds(item, b):
                    return False
            else:
                if not _negated_literal_holds(item, ground_for(item.predicate), b):
                    return False
        return True

    results: list[dict[str, str]] = []

    def walk(i: int, b: dict[str, str]) -> None:
        if i == len(positives):
            if checks_pass(b):
                results.append(b)
            return
        lit = positives[i]
        for nb in _literal_matches(lit, ground_for(lit.predicate), b):
            walk(i + 1, nb)

    walk(0, seed)

    var_order = sorted(info["variables"])
    results.sort(key=lambda b: tuple(b.get(v, "") for v in var_order))
    # deduplicate identical bindings (possible when a literal re-matches)
    unique: list[dict[str, str]] = []
    for b in results:
        if not unique or unique[-1] != b:
            unique.append(b)
    return unique


def match_exists(
    state: State,
    condition: Condition,
    binding: Optional[Mapping[str, str]] = None,
    extra_ground: Optional[Mapping[str, Sequence[tuple[str, ...]]]] = None,
) -> bool:
    """True iff :func:`match` would return at least one binding.

    Early-exit variant on the hot path of tax assessment: bindings are
    extended in place with backtracking instead of copied per candidate.
    """
    b = dict(binding) if binding else {}
    index = state.index

    def ground_for(pred: str) -> Sequence[tuple[str, ...]]:
        ground = index.get(pred)
        if ground is not None:
            return ground
        if extra_ground and pred in extra_ground:
            return extra_ground[pred]
        raise KernelError(f"unknown predicate in condition: {pred!r}")

    info = _condition_info(condition)
    positives, deferred = info["positives"], info["deferred"]
    plans = info["plans"]
    grounds = [ground_for(lit.predicate) for lit in positives]
    for g in grounds:
        if not g:
            return False  # a positive literal over an empty relation cannot match

    n = len(positives)

    def walk(i: int) -> bool:
        if i == n:
            for item in deferred:
                if isinstance(item, Comparison):
                    if not _comparison_holds(item, b):
                        return False
                elif not _negated_literal_holds(
                    item, ground_for(item.predicate), b
                ):
                    return False
            return True
        plan = plans[i]
        for tup in grounds[i]:
            added: list[str] = []
            ok = True
            for (kind, pat), val in zip(plan, tup):
                if kind == "wild":
                    continue
                if kind == "var":
                    cur = b.get(pat)
                    if cur is None:
                        b[pat] = val
                        added.append(pat)
                    elif cur != val:
                        ok = False
                        break
                elif pat != val:
                    ok = False
                    break
            if ok and walk(i + 1):
                return True
            for k in added:
                del b[k]
        return False

    return walk(0)


# ============================================================================
# Action rules and grounding
# ============================================================================


@dataclass(frozen=True)
class ActionRule:
    name: str  # one of ACTION_NAMES
    legal_ref: str
    params: tuple[str, ...]
    fresh_params: frozenset[str]  # bound to the lowest unused pool id
    precondition: Condition
    add_effects: tuple[Literal, ...]
    del_effects: tuple[Literal, ...]
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    def key(self) -> tuple[str, str]:
        return (self.name, self.legal_ref)

    def inferred_types(self) -> dict[str, str]:
        """Variable -> entity type, inferred from literal positions."""
        types: dict[str, str] = {}
        pools = itertools.chain(
            ((lit, False) for lit in self.add_effects),
            ((lit, False) for lit in self.del_effects),
            (
                (it, True)
                for it in self.precondition
                if isinstance(it, Literal)
            ),
        )
        for lit, _ in pools:
            sig = PREDICATES.get(lit.predicate)
            if sig is None:
                continue
            for arg, ty in zip(lit.args, sig):
                if is_variable(arg):
                    prev = types.get(arg)
                    if prev is not None and prev != ty:
                        raise KernelError(
                            f"variable {arg!r} used with conflicting types "
                            f"{prev!r} and {ty!r} in rule {self.key()}"
                        )
                    types[arg] = ty
        return types


class GroundedAction(NamedTuple):
    name: str
    legal_ref: str
    binding: tuple[tuple[str, str], ...]  # sorted (var, value) pairs

    def value(self, var: str) -> str:
        for k, v in self.binding:
            if k == var:
                return v
        raise KeyError(var)

    def as_dict(self) -> dict[str, str]:
        return dict(self.binding)

    def __str__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.binding)
        return f"{self.name}[{self.legal_ref}]({args})"


@dataclass(frozen=True)
class Domains:
    """Entity domains used to ground free rule parameters."""

    companies: tuple[str, ...]  # declared companies plus the unused-id pool
    countries: tuple[str, ...]
    ips: tuple[str, ...]

    def for_type(self, ty: str) -> tuple[str, ...]:
        if ty == "company":
            return self.companies
        if ty == "country":
            return self.countries
        if ty == "ip":
            return self.ips
        raise KernelError(f"unknown entity type: {ty!r}")


def _lowest_unused_pool_id(state: State, pool: Sequence[str]) -> Optional[str]:
    existing = {args[0] for args in state.index["exists"]}
    for cid in pool:
        if cid not in existing:
            return cid
    return None


def ground_rule(
    rule: ActionRule,
    state: State,
    domains: Domains,
    pool: Sequence[str],
) -> list[GroundedAction]:
    """All groundings of one rule whose precondition holds in ``state``."""
    seed: dict[str, str] = {}
    for p in rule.fresh_params:
        cid = _lowest_unused_pool_id(state, pool)
        if cid is None:
            return []
        seed[p] = cid

    types = rule.inferred_types()
    cond_vars = set(condition_variables(rule.precondition))
    positive_vars: set[str] = set()
    for it in rule.precondition:
        if isinstance(it, Literal) and not it.negated:
            positive_vars.update(it.variables())

    # parameters that no positive literal binds must be enumerated over their domain
    free = [
        p
        for p in rule.params
        if p not in seed and p not in positive_vars
    ]
    free_domains = []
    for p in free:
        ty = types.get(p)
        if ty is None:
            raise KernelError(
                f"cannot infer a domain for parameter {p!r} in rule {rule.key()}"
            )
        free_domains.append(domains.for_type(ty))

    grounded: list[GroundedAction] = []
    for combo in itertools.product(*free_domains):
        b = dict(seed)
        b.update(zip(free, combo))
        for m in match(state, rule.precondition, b):
            full = dict(b)
            full.update(m)
            # parameters must all be bound by now
            binding = tuple(sorted((p, full[p]) for p in rule.params))
            grounded.append(GroundedAction(rule.name, rule.legal_ref, binding))
    # distinct auxiliary-variable matches can collapse to the same parameter binding
    out: list[GroundedAction] = []
    seen: set[GroundedAction] = set()
    for g in grounded:
        if g not in seen:
            seen.add(g)
            out.append(g)
    return out


def applicable_actions(
    state: State,
    rules: Sequence[ActionRule],
    domains: Domains,
    pool: Sequence[str],
    max_steps: Optional[int] = None,
) -> list[GroundedAction]:
    """All applicable grounded actions, ordered by (name, legal_ref, binding).

    ``transferIP`` rules are suppressed once the one-shot transfer has been
    used.  When ``max_steps`` is given and reached, no action is applicable.
    """
    if max_steps is not None and state.step_count >= max_steps:
        return []
    out: list[GroundedAction] = []
    for rule in sorted(rules, key=lambda r: r.key()):
        if rule.name == "transferIP" and state.transfer_used:
            continue
        out.extend(ground_rule(rule, state, domains, pool))
    return out


def apply_action(
    state: State,
    action: GroundedAction,
    rules: Sequence[ActionRule],
    domains: Domains,
    pool: Sequence[str],
) -> State:
    """Successor state after ``action``; raises KernelError if not applicable."""
    rule = None
    for r in rules:
        if r.key() == (action.name, action.legal_ref):
            rule = r
            break
    if rule is None:
        raise KernelError(f"no rule for action {action}")
    if rule.name == "transferIP" and state.transfer_used:
        raise KernelError(f"transfer already used, cannot apply {action}")

    binding = action.as_dict()
    for p in rule.params:
        if p not in binding:
            raise KernelError(f"action {action} misses binding for {p!r}")
    for p in rule.fresh_params:
        expected = _lowest_unused_pool_id(state, pool)
        if expected is None or binding[p] != expected:
            raise KernelError(
                f"fresh parameter {p!r} of {action} must bind the lowest unused "
                f"pool id ({expected!r})"
            )
    if not match(state, rule.precondition, binding):
        raise KernelError(f"precondition of {action} does not hold")

    def instantiate(lit: Literal) -> Fact:
        args = []
        for a in lit.args:
            if a == WILDCARD:
                raise KernelError(f"wildcard in effect literal of {rule.key()}")
            args.append(binding.get(a, a))
        return make_fact(lit.predicate, args)

    facts = set(state.facts)
    for lit in rule.del_effects:
        facts.discard(instantiate(lit))
    for lit in rule.add_effects:
        facts.add(instantiate(lit))
    return State(
        facts=frozenset(facts),
        step_count=state.step_count + 1,
        transfer_used=state.transfer_used or rule.name == "transferIP",
    )
