"""Deterministic gridworld RTS simulator.

A 10x10 (configurable) map with durative unit actions, 8-component discrete
actions, per-component validity masks, a 27-plane binary observation, and two
reward functions (sparse + shaped) computed on every transition. One action is
issued to one unit per decision; each decision advances the game 10 ticks
(1 issuing tick + 9 skipped).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from enum import IntEnum

import numpy as np


class TaskId(IntEnum):
    LEARN_TO_ATTACK = 0
    PRODUCE_COMBAT_UNITS = 1
    DEFEAT_RANDOM_ENEMY = 2


TASK_NAMES = {
    TaskId.LEARN_TO_ATTACK: "LearnToAttack",
    TaskId.PRODUCE_COMBAT_UNITS: "ProduceCombatUnits",
    TaskId.DEFEAT_RANDOM_ENEMY: "DefeatRandomEnemy",
}


def task_from_name(name: str) -> TaskId:
    for tid, tname in TASK_NAMES.items():
        if tname.lower() == name.lower():
            return tid
    raise ValueError(f"unknown task {name!r}; expected one of {list(TASK_NAMES.values())}")


class Owner(IntEnum):
    NEUTRAL = 0
    P1 = 1
    P2 = 2


class UnitKind(IntEnum):
    # order matches the produce-type action component and the type planes
    RESOURCE = 0
    BASE = 1
    BARRACKS = 2
    WORKER = 3
    LIGHT = 4
    HEAVY = 5
    RANGED = 6


COMBAT_KINDS = (UnitKind.LIGHT, UnitKind.HEAVY, UnitKind.RANGED)
BUILDING_KINDS = (UnitKind.BASE, UnitKind.BARRACKS)
MOBILE_KINDS = (UnitKind.WORKER,) + COMBAT_KINDS


class ActionType(IntEnum):
    NOOP = 0
    MOVE = 1
    HARVEST = 2
    RETURN = 3
    PRODUCE = 4
    ATTACK = 5


# action vector component indices
SOURCE_UNIT, ACTION_TYPE, MOVE_DIR, HARVEST_DIR, RETURN_DIR, PRODUCE_DIR, PRODUCE_TYPE, ATTACK_TARGET = range(8)

# north, east, south, west
DIRECTIONS = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class UnitStats:
    cost: int
    max_hp: int
    attack_damage: int
    attack_range: int
    production_time: int  # ticks the producer stays busy making this kind
    move_time: int


# microRTS-flavoured defaults; configuration, not constants
DEFAULT_STATS: dict[UnitKind, UnitStats] = {
    UnitKind.RESOURCE: UnitStats(0, 1, 0, 0, 0, 0),
    UnitKind.BASE: UnitStats(10, 10, 0, 0, 200, 0),
    UnitKind.BARRACKS: UnitStats(5, 4, 0, 0, 100, 0),
    UnitKind.WORKER: UnitStats(1, 1, 1, 1, 50, 10),
    UnitKind.LIGHT: UnitStats(2, 4, 2, 1, 80, 10),
    UnitKind.HEAVY: UnitStats(2, 4, 4, 1, 80, 10),
    UnitKind.RANGED: UnitStats(2, 1, 1, 3, 80, 10),
}

PRODUCES: dict[UnitKind, tuple[UnitKind, ...]] = {
    UnitKind.BASE: (UnitKind.WORKER,),
    UnitKind.BARRACKS: COMBAT_KINDS,
    UnitKind.WORKER: (UnitKind.BASE, UnitKind.BARRACKS),
}

HARVEST_TIME = 10
RETURN_TIME = 10
ATTACK_TIME = 5  # completes inside the 10-tick decision window
TICKS_PER_DECISION = 10
DEFAULT_MAX_TICKS = 2000
INITIAL_STOCKPILE = 5
RESOURCE_NODE_STOCK = 10


@dataclass
class Unit:
    id: int
    owner: Owner
    kind: UnitKind
    row: int
    col: int
    hp: int
    carried: int = 0  # workers only
    stock: int = 0  # resource nodes only
    busy_until: int | None = None
    action: ActionType = ActionType.NOOP
    # pending payload: target cell of the in-flight action, produced kind for PRODUCE
    act_row: int = -1
    act_col: int = -1
    act_kind: int = -1

    def copy(self) -> "Unit":
        return Unit(self.id, self.owner, self.kind, self.row, self.col, self.hp,
                    self.carried, self.stock, self.busy_until, self.action,
                    self.act_row, self.act_col, self.act_kind)


@dataclass
class Counters:
    """Cumulative per-player event counts; reward deltas are diffs of these."""

    attacks_issued: list[int] = field(default_factory=lambda: [0, 0])
    harvests: list[int] = field(default_factory=lambda: [0, 0])
    returns: list[int] = field(default_factory=lambda: [0, 0])
    workers_produced: list[int] = field(default_factory=lambda: [0, 0])
    buildings_constructed: list[int] = field(default_factory=lambda: [0, 0])
    combat_units_produced: list[int] = field(default_factory=lambda: [0, 0])
    production_spend_completed: list[int] = field(default_factory=lambda: [0, 0])

    def copy(self) -> "Counters":
        return Counters(**{k: list(v) for k, v in asdict(self).items()})


@dataclass
class RewardVector:
    sparse: float
    shaped: float


@dataclass
class GameState:
    width: int
    height: int
    task: TaskId
    units: dict[int, Unit]
    player_resources: dict[int, int]
    tick: int = 0
    max_ticks: int = DEFAULT_MAX_TICKS
    next_unit_id: int = 0
    rng: np.random.Generator | None = None
    counters: Counters = field(default_factory=Counters)
    done: bool = False
    winner: int | None = None  # 1 / 2, None while running or on a draw
    stats: dict[UnitKind, UnitStats] = field(default_factory=lambda: dict(DEFAULT_STATS))

    def copy(self) -> "GameState":
        # the rng generator object is handed over to the copy (move semantics);
        # the source state stays valid for inspection, not for further stepping
        return GameState(self.width, self.height, self.task,
                         {uid: u.copy() for uid, u in self.units.items()},
                         dict(self.player_resources), self.tick, self.max_ticks,
                         self.next_unit_id, self.rng, self.counters.copy(),
                         self.done, self.winner, self.stats)

    def occupancy(self) -> dict[tuple[int, int], Unit]:
        return {(u.row, u.col): u for u in self.units.values()}

    def cell_index(self, row: int, col: int) -> int:
        return row * self.width + col

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def player_units(self, player: int):
        return [u for u in self.units.values() if u.owner == player]

    def spawn(self, owner: Owner, kind: UnitKind, row: int, col: int,
              hp: int | None = None, stock: int = 0) -> Unit:
        u = Unit(self.next_unit_id, owner, kind, row, col,
                 hp if hp is not None else self.stats[kind].max_hp, stock=stock)
        self.units[u.id] = u
        self.next_unit_id += 1
        return u


# ----- reset ------------------------------------------------------------------


def reset(task: TaskId, seed: int, width: int = 10, height: int = 10,
          max_ticks: int = DEFAULT_MAX_TICKS):
    """Build the mirrored initial layout; deterministic for equal seeds."""
    state = GameState(width, height, task, {}, {1: INITIAL_STOCKPILE, 2: INITIAL_STOCKPILE},
                      max_ticks=max_ticks, rng=np.random.default_rng(seed))
    h, w = height, width
    state.spawn(Owner.P1, UnitKind.BASE, 2, 1)
    state.spawn(Owner.P1, UnitKind.WORKER, 1, 1)
    state.spawn(Owner.P2, UnitKind.BASE, h - 3, w - 2)
    state.spawn(Owner.P2, UnitKind.WORKER, h - 2, w - 2)
    for r, c in ((0, 0), (0, 1)):
        state.spawn(Owner.NEUTRAL, UnitKind.RESOURCE, r, c, stock=RESOURCE_NODE_STOCK)
    for r, c in ((h - 1, w - 1), (h - 1, w - 2)):
        state.spawn(Owner.NEUTRAL, UnitKind.RESOURCE, r, c, stock=RESOURCE_NODE_STOCK)
    return state, encode_observation(state), valid_action_mask(state)


# ----- action masks -------------------------------------------------------------


def mask_component_sizes(height: int, width: int) -> tuple[int, ...]:
    hw = height * width
    return (hw, 6, 4, 4, 4, 4, 7, hw)


def mask_offsets(height: int, width: int) -> list[int]:
    sizes = mask_component_sizes(height, width)
    offs = [0]
    for s in sizes:
        offs.append(offs[-1] + s)
    return offs


def split_mask(mask: np.ndarray, height: int, width: int) -> list[np.ndarray]:
    offs = mask_offsets(height, width)
    return [mask[offs[i]:offs[i + 1]] for i in range(8)]


def _unit_valid_types(state: GameState, u: Unit) -> list[ActionType]:
    """Action types unit u could issue right now (NOOP always included)."""
    types = [ActionType.NOOP]
    occ = state.occupancy()
    neighbors = []
    for dr, dc in DIRECTIONS:
        r, c = u.row + dr, u.col + dc
        if state.in_bounds(r, c):
            neighbors.append((r, c, occ.get((r, c))))
    if u.kind in MOBILE_KINDS and any(n[2] is None for n in neighbors):
        types.append(ActionType.MOVE)
    if u.kind == UnitKind.WORKER and u.carried == 0 and any(
            n[2] is not None and n[2].kind == UnitKind.RESOURCE and n[2].stock > 0 for n in neighbors):
        types.append(ActionType.HARVEST)
    if u.kind == UnitKind.WORKER and u.carried > 0 and any(
            n[2] is not None and n[2].kind == UnitKind.BASE and n[2].owner == u.owner for n in neighbors):
        types.append(ActionType.RETURN)
    options = PRODUCES.get(u.kind, ())
    if options and any(n[2] is None for n in neighbors):
        affordable = [k for k in options if state.player_resources[int(u.owner)] >= state.stats[k].cost]
        if affordable:
            types.append(ActionType.PRODUCE)
    if state.stats[u.kind].attack_damage > 0 and _attackable_cells(state, u):
        types.append(ActionType.ATTACK)
    return types


def _attackable_cells(state: GameState, u: Unit) -> list[int]:
    rng_ = state.stats[u.kind].attack_range
    if rng_ <= 0:
        return []
    enemy = Owner.P2 if u.owner == Owner.P1 else Owner.P1
    cells = []
    for t in state.units.values():
        if t.owner == enemy and abs(t.row - u.row) + abs(t.col - u.col) <= rng_:
            cells.append(state.cell_index(t.row, t.col))
    return cells


def valid_action_mask(state: GameState, player: int = 1) -> np.ndarray:
    """Flat binary mask over all 2*h*w + 29 action component entries.

    Source-unit bits mark cells with owned, non-busy units; the other
    components hold the union of those units' currently legal choices.
    Every component keeps at least one set bit (NOOP fallback).
    """
    h, w = state.height, state.width
    sizes = mask_component_sizes(h, w)
    offs = mask_offsets(h, w)
    mask = np.zeros(offs[-1], dtype=bool)
    comp = [mask[offs[i]:offs[i + 1]] for i in range(8)]
    comp[ACTION_TYPE][ActionType.NOOP] = True

    avail = [u for u in state.units.values()
             if u.owner == player and u.busy_until is None and u.kind != UnitKind.RESOURCE]
    if not avail:
        owned = [u for u in state.units.values() if u.owner == player]
        if owned:
            for u in owned:
                comp[SOURCE_UNIT][state.cell_index(u.row, u.col)] = True
        else:
            comp[SOURCE_UNIT][0] = True
    else:
        occ = state.occupancy()
        for u in avail:
            comp[SOURCE_UNIT][state.cell_index(u.row, u.col)] = True
            types = _unit_valid_types(state, u)
            for t in types:
                comp[ACTION_TYPE][t] = True
            for d, (dr, dc) in enumerate(DIRECTIONS):
                r, c = u.row + dr, u.col + dc
                if not state.in_bounds(r, c):
                    continue
                n = occ.get((r, c))
                if n is None:
                    if ActionType.MOVE in types:
                        comp[MOVE_DIR][d] = True
                    if ActionType.PRODUCE in types:
                        comp[PRODUCE_DIR][d] = True
                elif n.kind == UnitKind.RESOURCE and n.stock > 0 and ActionType.HARVEST in types:
                    comp[HARVEST_DIR][d] = True
                elif n.kind == UnitKind.BASE and n.owner == u.owner and ActionType.RETURN in types:
                    comp[RETURN_DIR][d] = True
            if ActionType.PRODUCE in types:
                for k in PRODUCES.get(u.kind, ()):
                    if state.player_resources[int(u.owner)] >= state.stats[k].cost:
                        comp[PRODUCE_TYPE][int(k)] = True
            for cell in _attackable_cells(state, u):
                comp[ATTACK_TARGET][cell] = True
    for i in range(8):
        if not comp[i].any():
            comp[i][0] = True
    return mask


# ----- observation ----------------------------------------------------------------

N_PLANES = 27
_HP_OFF, _RES_OFF, _OWNER_OFF, _TYPE_OFF, _ACTION_OFF = 0, 5, 10, 13, 21


def encode_observation(state: GameState, player: int = 1) -> np.ndarray:
    """(h, w, 27) binary tensor: hp(5) | resources(5) | owner(3) | type(8) | action(6)."""
    obs = np.zeros((state.height, state.width, N_PLANES), dtype=np.float32)
    obs[:, :, _HP_OFF] = 1.0  # hp bucket 0
    obs[:, :, _RES_OFF] = 1.0  # resources bucket 0
    obs[:, :, _OWNER_OFF + 1] = 1.0  # owner "-"
    obs[:, :, _TYPE_OFF] = 1.0  # type "-"
    obs[:, :, _ACTION_OFF] = 1.0  # action "-"
    for u in state.units.values():
        cell = obs[u.row, u.col]
        cell[_HP_OFF:_ACTION_OFF + 6] = 0.0
        cell[_HP_OFF + min(u.hp, 4)] = 1.0
        res = u.carried if u.kind == UnitKind.WORKER else u.stock
        cell[_RES_OFF + min(res, 4)] = 1.0
        if u.owner == Owner.NEUTRAL:
            owner_idx = 1
        elif int(u.owner) == player:
            owner_idx = 0
        else:
            owner_idx = 2
        cell[_OWNER_OFF + owner_idx] = 1.0
        cell[_TYPE_OFF + 1 + int(u.kind)] = 1.0
        cell[_ACTION_OFF + int(u.action)] = 1.0
    return obs


# ----- issuing and resolving actions --------------------------------------------------


def _issue(state: GameState, action: np.ndarray, player: int) -> bool:
    """Try to issue the action for `player`; invalid combinations degrade to NOOP.

    Returns True if a non-NOOP action was accepted.
    """
    h, w = state.height, state.width
    cell = int(action[SOURCE_UNIT])
    row, col = divmod(cell, w)
    if not state.in_bounds(row, col):
        return False
    occ = state.occupancy()
    u = occ.get((row, col))
    if u is None or int(u.owner) != player or u.busy_until is not None or u.kind == UnitKind.RESOURCE:
        return False
    atype = int(action[ACTION_TYPE])
    if atype == ActionType.NOOP:
        return False

    if atype == ActionType.MOVE:
        if u.kind not in MOBILE_KINDS:
            return False
        dr, dc = DIRECTIONS[int(action[MOVE_DIR])]
        r, c = u.row + dr, u.col + dc
        if not state.in_bounds(r, c) or (r, c) in occ:
            return False
        _begin(state, u, ActionType.MOVE, state.stats[u.kind].move_time, r, c)
        return True

    if atype == ActionType.HARVEST:
        if u.kind != UnitKind.WORKER or u.carried != 0:
            return False
        dr, dc = DIRECTIONS[int(action[HARVEST_DIR])]
        r, c = u.row + dr, u.col + dc
        n = occ.get((r, c))
        if n is None or n.kind != UnitKind.RESOURCE or n.stock <= 0:
            return False
        _begin(state, u, ActionType.HARVEST, HARVEST_TIME, r, c)
        return True

    if atype == ActionType.RETURN:
        if u.kind != UnitKind.WORKER or u.carried <= 0:
            return False
        dr, dc = DIRECTIONS[int(action[RETURN_DIR])]
        r, c = u.row + dr, u.col + dc
        n = occ.get((r, c))
        if n is None or n.kind != UnitKind.BASE or n.owner != u.owner:
            return False
        _begin(state, u, ActionType.RETURN, RETURN_TIME, r, c)
        return True

    if atype == ActionType.PRODUCE:
        kind_idx = int(action[PRODUCE_TYPE])
        options = PRODUCES.get(u.kind, ())
        if kind_idx not in [int(k) for k in options]:
            return False
        kind = UnitKind(kind_idx)
        if state.player_resources[player] < state.stats[kind].cost:
            return False
        dr, dc = DIRECTIONS[int(action[PRODUCE_DIR])]
        r, c = u.row + dr, u.col + dc
        if not state.in_bounds(r, c) or (r, c) in occ:
            return False
        state.player_resources[player] -= state.stats[kind].cost
        _begin(state, u, ActionType.PRODUCE, state.stats[kind].production_time, r, c, int(kind))
        return True

    if atype == ActionType.ATTACK:
        if state.stats[u.kind].attack_damage <= 0:
            return False
        tcell = int(action[ATTACK_TARGET])
        tr, tc = divmod(tcell, w)
        if not state.in_bounds(tr, tc):
            return False
        target = occ.get((tr, tc))
        enemy = Owner.P2 if player == 1 else Owner.P1
        if target is None or target.owner != enemy:
            return False
        if abs(tr - u.row) + abs(tc - u.col) > state.stats[u.kind].attack_range:
            return False
        _begin(state, u, ActionType.ATTACK, ATTACK_TIME, tr, tc)
        state.counters.attacks_issued[player - 1] += 1
        return True

    return False


def _begin(state: GameState, u: Unit, atype: ActionType, duration: int,
           r: int, c: int, kind: int = -1):
    u.busy_until = state.tick + duration
    u.action = atype
    u.act_row, u.act_col, u.act_kind = r, c, kind


def _clear(u: Unit):
    u.busy_until = None
    u.action = ActionType.NOOP
    u.act_row = u.act_col = u.act_kind = -1


def _resolve_tick(state: GameState):
    due = sorted(uid for uid, u in state.units.items() if u.busy_until == state.tick)
    for uid in due:
        u = state.units.get(uid)
        if u is None:
            continue  # killed earlier this tick
        occ = state.occupancy()
        player = int(u.owner)
        if u.action == ActionType.MOVE:
            if (u.act_row, u.act_col) not in occ:
                u.row, u.col = u.act_row, u.act_col
        elif u.action == ActionType.HARVEST:
            n = occ.get((u.act_row, u.act_col))
            if n is not None and n.kind == UnitKind.RESOURCE and n.stock > 0:
                n.stock -= 1
                if n.stock == 0:
                    del state.units[n.id]
                u.carried = 1
                state.counters.harvests[player - 1] += 1
        elif u.action == ActionType.RETURN:
            n = occ.get((u.act_row, u.act_col))
            if n is not None and n.kind == UnitKind.BASE and n.owner == u.owner:
                state.player_resources[player] += u.carried
                state.counters.returns[player - 1] += u.carried
                u.carried = 0
        elif u.action == ActionType.PRODUCE:
            kind = UnitKind(u.act_kind)
            if (u.act_row, u.act_col) not in occ:
                state.spawn(u.owner, kind, u.act_row, u.act_col)
                state.counters.production_spend_completed[player - 1] += state.stats[kind].cost
                if kind == UnitKind.WORKER:
                    state.counters.workers_produced[player - 1] += 1
                elif kind in BUILDING_KINDS:
                    state.counters.buildings_constructed[player - 1] += 1
                else:
                    state.counters.combat_units_produced[player - 1] += 1
            else:
                state.player_resources[player] += state.stats[kind].cost  # refund
        elif u.action == ActionType.ATTACK:
            target = occ.get((u.act_row, u.act_col))
            enemy = Owner.P2 if u.owner == Owner.P1 else Owner.P1
            if target is not None and target.owner == enemy:
                target.hp -= state.stats[u.kind].attack_damage
                if target.hp <= 0:
                    del state.units[target.id]
        _clear(u)


# ----- opponent bot -------------------------------------------------------------------


def biased_random_bot(state: GameState, rng: np.random.Generator, player: int = 2) -> np.ndarray:
    """Random opponent with attack/harvest/return weighted 5x over other types."""
    action = np.zeros(8, dtype=np.int64)
    units = sorted((u for u in state.units.values()
                    if int(u.owner) == player and u.busy_until is None and u.kind != UnitKind.RESOURCE),
                   key=lambda u: u.id)
    if not units:
        return action
    u = units[int(rng.integers(len(units)))]
    action[SOURCE_UNIT] = state.cell_index(u.row, u.col)
    types = _unit_valid_types(state, u)
    weights = np.array([5.0 if t in (ActionType.ATTACK, ActionType.HARVEST, ActionType.RETURN) else 1.0
                        for t in types])
    atype = types[int(rng.choice(len(types), p=weights / weights.sum()))]
    action[ACTION_TYPE] = int(atype)
    if atype == ActionType.NOOP:
        return action

    occ = state.occupancy()
    empty_dirs, res_dirs, base_dirs = [], [], []
    for d, (dr, dc) in enumerate(DIRECTIONS):
        r, c = u.row + dr, u.col + dc
        if not state.in_bounds(r, c):
            continue
        n = occ.get((r, c))
        if n is None:
            empty_dirs.append(d)
        elif n.kind == UnitKind.RESOURCE and n.stock > 0:
            res_dirs.append(d)
        elif n.kind == UnitKind.BASE and n.owner == u.owner:
            base_dirs.append(d)
    if atype == ActionType.MOVE:
        action[MOVE_DIR] = empty_dirs[int(rng.integers(len(empty_dirs)))]
    elif atype == ActionType.HARVEST:
        action[HARVEST_DIR] = res_dirs[int(rng.integers(len(res_dirs)))]
    elif atype == ActionType.RETURN:
        action[RETURN_DIR] = base_dirs[int(rng.integers(len(base_dirs)))]
    elif atype == ActionType.PRODUCE:
        kinds = [k for k in PRODUCES[u.kind]
                 if state.player_resources[player] >= state.stats[k].cost]
        action[PRODUCE_TYPE] = int(kinds[int(rng.integers(len(kinds)))])
        action[PRODUCE_DIR] = empty_dirs[int(rng.integers(len(empty_dirs)))]
    elif atype == ActionType.ATTACK:
        cells = _attackable_cells(state, u)
        action[ATTACK_TARGET] = cells[int(rng.integers(len(cells)))]
    return action


# ----- rewards ---------------------------------------------------------------------------


def _closest_unit_distance(state: GameState, player: int = 1) -> float | None:
    """Euclidean distance from the enemy base to the player's closest unit."""
    enemy = 2 if player == 1 else 1
    bases = sorted((u for u in state.units.values()
                    if int(u.owner) == enemy and u.kind == UnitKind.BASE), key=lambda u: u.id)
    own = sorted((u for u in state.units.values() if int(u.owner) == player), key=lambda u: u.id)
    if not bases or not own:
        return None
    b = bases[0]
    return min(math.sqrt((u.row - b.row) ** 2 + (u.col - b.col) ** 2) for u in own)


def _distance_delta(prev: GameState, nxt: GameState) -> float:
    d0, d1 = _closest_unit_distance(prev), _closest_unit_distance(nxt)
    if d0 is None or d1 is None:
        return 0.0
    return d0 - d1


def compute_rewards(prev: GameState, nxt: GameState, action: np.ndarray, task: TaskId) -> RewardVector:
    """Sparse and shaped rewards for one transition, from the agent's (player 1) view."""
    c0, c1 = prev.counters, nxt.counters
    attacks = c1.attacks_issued[0] - c0.attacks_issued[0]
    harvests = c1.harvests[0] - c0.harvests[0]
    returns = c1.returns[0] - c0.returns[0]
    workers = c1.workers_produced[0] - c0.workers_produced[0]
    buildings = c1.buildings_constructed[0] - c0.buildings_constructed[0]
    combat = c1.combat_units_produced[0] - c0.combat_units_produced[0]
    won = nxt.done and nxt.winner == 1 and not prev.done
    lost = nxt.done and nxt.winner == 2 and not prev.done

    if task == TaskId.LEARN_TO_ATTACK:
        sparse = float(attacks)
        shaped = _distance_delta(prev, nxt) + sparse
    elif task == TaskId.PRODUCE_COMBAT_UNITS:
        sparse = float(combat)
        shaped = float(buildings + harvests + returns + 7 * combat)
    else:
        sparse = 1.0 if won else (-1.0 if lost else 0.0)
        shaped = (5.0 * won + harvests + returns + workers + 0.2 * buildings
                  + attacks + 7.0 * combat + 0.2 * _distance_delta(prev, nxt))
    return RewardVector(sparse=sparse, shaped=float(shaped))


# ----- step -------------------------------------------------------------------------------


def _check_termination(state: GameState):
    p1 = sum(1 for u in state.units.values() if u.owner == Owner.P1)
    p2 = sum(1 for u in state.units.values() if u.owner == Owner.P2)
    if state.task == TaskId.LEARN_TO_ATTACK:
        if p2 == 0:
            state.done = True
    elif state.task == TaskId.DEFEAT_RANDOM_ENEMY:
        if p2 == 0 and p1 > 0:
            state.done = True
            state.winner = 1
        elif p1 == 0 and p2 > 0:
            state.done = True
            state.winner = 2
        elif p1 == 0 and p2 == 0:
            state.done = True
    if state.tick >= state.max_ticks:
        state.done = True


def step(state: GameState, agent_action: np.ndarray):
    """Issue one agent action (+ bot action in DefeatRandomEnemy), advance 10 ticks.

    Returns (next_state, observation, mask, RewardVector, done, info).
    """
    if state.done:
        raise RuntimeError("step() called on a terminal state")
    nxt = state.copy()
    agent_action = np.asarray(agent_action, dtype=np.int64)
    issued = _issue(nxt, agent_action, player=1)
    if nxt.task == TaskId.DEFEAT_RANDOM_ENEMY:
        bot_action = biased_random_bot(nxt, nxt.rng, player=2)
        _issue(nxt, bot_action, player=2)
    for _ in range(TICKS_PER_DECISION):
        nxt.tick += 1
        _resolve_tick(nxt)
    _check_termination(nxt)
    rewards = compute_rewards(state, nxt, agent_action, nxt.task)
    info = {"tick": nxt.tick, "issued": issued, "winner": nxt.winner}
    return nxt, encode_observation(nxt), valid_action_mask(nxt), rewards, nxt.done, info


# ----- accounting / serialization ----------------------------------------------------------


def resource_ledger(state: GameState) -> dict:
    """Where every resource currently sits; `total` is conserved across a game."""
    ground = sum(u.stock for u in state.units.values() if u.kind == UnitKind.RESOURCE)
    carried = sum(u.carried for u in state.units.values() if u.kind == UnitKind.WORKER)
    stockpiles = state.player_resources[1] + state.player_resources[2]
    in_progress = sum(state.stats[UnitKind(u.act_kind)].cost
                      for u in state.units.values()
                      if u.action == ActionType.PRODUCE and u.act_kind >= 0)
    completed = sum(state.counters.production_spend_completed)
    return {
        "ground": ground,
        "carried": carried,
        "stockpiles": stockpiles,
        "in_progress_production": in_progress,
        "completed_production": completed,
        "total": ground + carried + stockpiles + in_progress + completed,
    }


def state_to_json(state: GameState) -> str:
    doc = {
        "width": state.width,
        "height": state.height,
        "task": TASK_NAMES[state.task],
        "tick": state.tick,
        "max_ticks": state.max_ticks,
        "player_resources": {str(k): v for k, v in state.player_resources.items()},
        "next_unit_id": state.next_unit_id,
        "done": state.done,
        "winner": state.winner,
        "counters": asdict(state.counters),
        "units": [
            {
                "id": u.id, "owner": int(u.owner), "kind": int(u.kind),
                "row": u.row, "col": u.col, "hp": u.hp, "carried": u.carried,
                "stock": u.stock, "busy_until": u.busy_until, "action": int(u.action),
                "act_row": u.act_row, "act_col": u.act_col, "act_kind": u.act_kind,
            }
            for u in sorted(state.units.values(), key=lambda u: u.id)
        ],
        "rng_state": state.rng.bit_generator.state if state.rng is not None else None,
    }
    return json.dumps(doc)


def state_from_json(doc: str) -> GameState:
    d = json.loads(doc)
    state = GameState(d["width"], d["height"], task_from_name(d["task"]), {},
                      {int(k): v for k, v in d["player_resources"].items()},
                      d["tick"], d["max_ticks"], d["next_unit_id"],
                      counters=Counters(**d["counters"]), done=d["done"], winner=d["winner"])
    for ud in d["units"]:
        state.units[ud["id"]] = Unit(ud["id"], Owner(ud["owner"]), UnitKind(ud["kind"]),
                                     ud["row"], ud["col"], ud["hp"], ud["carried"], ud["stock"],
                                     ud["busy_until"], ActionType(ud["action"]),
                                     ud["act_row"], ud["act_col"], ud["act_kind"])
    if d["rng_state"] is not None:
        state.rng = np.random.default_rng(0)
        state.rng.bit_generator.state = d["rng_state"]
    return state
