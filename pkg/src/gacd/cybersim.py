"""Attack/defense episode simulator over a scenario.

Blue (the learning agent) chooses one action per step; a scripted green user
adds benign scan noise; a scripted red agent advances toward the operational
server.  Phases run blue -> green -> red, then the step counter increments.

Blue's view is partial: per-host activity is event-driven and lossy (exploit
and scan events surface with probability ``DETECTION_PROB``), and an
established foothold displays as ``No`` until an exploit is detected (showing
``Unknown``) or the host is analysed (showing the true level for that step).
``Activity.UNKNOWN`` covers the ambiguous case of scan and exploit events
landing on one host in the same step.

Reward model (raw, per step, all penalties negative):

* -0.1 per compromised host (User level, or Privileged outside the
  enterprise-server case below)
* -1.0 per Privileged Server-typed host in the enterprise subnet
* -10.0 per successful Impact on an operational server
* -1.0 per Restore action; Sleep/Analyse/Remove/DeployDecoy are free
* an invalid blue action ends the episode with exactly ``INVALID_PENALTY``

Normalized reward divides by the scenario's worst-case per-step impact
exposure relative to the reference network (one operational server), so the
reference network is untouched and a three-op-server scenario scales by 1/3.
The invalid-action penalty is protocol-level and bypasses normalization.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .scenario import Scenario

MAX_STEPS = 100
INVALID_PENALTY = -1500.0
DETECTION_PROB = 0.95
EXPLOIT_SUCCESS_PROB = 0.9
P_GREEN_DEFAULT = 0.25
RED_GIVE_UP_FAILS = 2  # failed exploits on one host before red writes it off


class Compromise(enum.IntEnum):
    NONE = 0
    USER = 1
    PRIVILEGED = 2


class Activity(enum.Enum):
    NONE = "None"
    SCAN = "Scan"
    EXPLOIT = "Exploit"
    UNKNOWN = "Unknown"


class CompromiseSeen(enum.Enum):
    NO = "No"
    UNKNOWN = "Unknown"
    USER = "User"
    PRIVILEGED = "Privileged"


class BlueKind(enum.Enum):
    SLEEP = "Sleep"
    ANALYSE = "Analyse"
    REMOVE = "Remove"
    RESTORE = "Restore"
    DEPLOY_DECOY = "DeployDecoy"


BLUE_KINDS = tuple(BlueKind)


class RedKind(enum.Enum):
    SLEEP = "Sleep"
    SCAN = "Scan"
    EXPLOIT = "Exploit"
    ESCALATE = "Escalate"
    IMPACT = "Impact"
    MOVE = "Move"


@dataclass(frozen=True)
class BlueAction:
    kind: BlueKind
    target: str | None = None


@dataclass(frozen=True)
class RedAction:
    kind: RedKind
    target: str | None = None

    def __str__(self) -> str:
        return self.kind.value if self.target is None else f"{self.kind.value}:{self.target}"


@dataclass
class DecoyRecord:
    source: str  # host the decoy shields
    lure: str  # host the decoy advertises itself to (red's seat at deploy time)
    sprung: bool = False


@dataclass
class HostState:
    compromise: Compromise = Compromise.NONE
    known_to_red: bool = False
    scanned_by_red: bool = False
    suspected: bool = False  # blue-side flag: a detected exploit landed here
    red_fails: int = 0


@dataclass
class WorldState:
    hosts: dict[str, HostState]
    red_position: str
    red_current_subnet: str
    red_visited: set[str]
    red_kind: str  # "bline" | "meander"
    step_index: int = 0
    done: bool = False
    p_green: float = P_GREEN_DEFAULT
    decoys: dict[str, DecoyRecord] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


@dataclass(frozen=True)
class ObservationRow:
    host: str
    activity: Activity
    compromised: CompromiseSeen


@dataclass(frozen=True)
class Observation:
    rows: tuple[ObservationRow, ...]
    decoys: tuple[DecoyRecord, ...]


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    raw_reward: float
    normalized_reward: float
    terminated: bool
    truncated: bool
    info: dict


# ---------------------------------------------------------------------------
# lifecycle


def reset(
    scenario: Scenario, red_kind: str, seed: int, p_green: float = P_GREEN_DEFAULT
) -> tuple[WorldState, Observation]:
    """Fresh episode: red holds a User-level foothold on its start host, unseen.

    ``red_kind`` "none" is a test mode: no foothold, and red sleeps forever.
    """
    if red_kind not in ("bline", "meander", "none"):
        raise ValueError(f"unknown red kind {red_kind!r}")
    hosts = {h.id: HostState() for h in scenario.hosts}
    start = scenario.roles.red_start_host
    if red_kind != "none":
        hosts[start] = HostState(
            compromise=Compromise.USER, known_to_red=True, scanned_by_red=True
        )
    state = WorldState(
        hosts=hosts,
        red_position=start,
        red_current_subnet=scenario.subnet_of(start),
        red_visited={scenario.subnet_of(start)},
        red_kind=red_kind,
        p_green=p_green,
        rng=np.random.default_rng(seed),
    )
    return state, _observe(scenario, state, {}, set())


def _observe(
    scenario: Scenario,
    state: WorldState,
    activities: dict[str, Activity],
    analysed: set[str],
) -> Observation:
    rows = []
    for h in scenario.hosts:
        hs = state.hosts[h.id]
        if h.id in analysed:
            seen = {
                Compromise.NONE: CompromiseSeen.NO,
                Compromise.USER: CompromiseSeen.USER,
                Compromise.PRIVILEGED: CompromiseSeen.PRIVILEGED,
            }[hs.compromise]
        elif hs.suspected:
            seen = CompromiseSeen.UNKNOWN
        else:
            seen = CompromiseSeen.NO
        rows.append(
            ObservationRow(
                host=h.id,
                activity=activities.get(h.id, Activity.NONE),
                compromised=seen,
            )
        )
    decoys = tuple(copy.deepcopy(d) for d in state.decoys.values())
    return Observation(rows=tuple(rows), decoys=decoys)


def observe(scenario: Scenario, state: WorldState) -> Observation:
    """Blue's quiet view of a state: no fresh activity, nothing analysed.

    Used when an episode continues over a swapped-in scenario and the policy
    needs a first look at the new network before its next action.
    """
    return _observe(scenario, state, {}, set())


def _is_valid_blue(scenario: Scenario, state: WorldState, action: BlueAction) -> bool:
    if action.kind is BlueKind.SLEEP:
        return True
    if action.target is None or action.target not in state.hosts:
        return False
    if action.kind is BlueKind.DEPLOY_DECOY and action.target in state.decoys:
        return False
    return True


def step(
    scenario: Scenario, state: WorldState, action: BlueAction
) -> tuple[WorldState, StepResult]:
    """Advance one step.  The input state is left untouched (snapshot semantics)."""
    if state.done:
        raise ValueError("episode is finished; reset before stepping again")
    s = copy.deepcopy(state)
    activities: dict[str, Activity] = {}
    analysed: set[str] = set()

    if not _is_valid_blue(scenario, s, action):
        s.done = True
        s.step_index += 1
        obs = _observe(scenario, s, activities, analysed)
        return s, StepResult(
            observation=obs,
            raw_reward=INVALID_PENALTY,
            normalized_reward=INVALID_PENALTY,
            terminated=False,
            truncated=True,
            info={"invalid_action": True, "red_action": str(RedAction(RedKind.SLEEP))},
        )

    restores = 0

    # -- blue phase
    t = action.target
    if action.kind is BlueKind.ANALYSE:
        analysed.add(t)
    elif action.kind is BlueKind.REMOVE:
        if s.hosts[t].compromise is Compromise.USER:
            s.hosts[t].compromise = Compromise.NONE
            if s.red_position == t:
                s.red_position = scenario.roles.red_start_host
        s.hosts[t].suspected = False
    elif action.kind is BlueKind.RESTORE:
        restores += 1
        s.hosts[t].compromise = Compromise.NONE
        s.hosts[t].suspected = False
        if s.red_position == t:
            s.red_position = scenario.roles.red_start_host
    elif action.kind is BlueKind.DEPLOY_DECOY:
        s.decoys[t] = DecoyRecord(source=t, lure=s.red_position)

    # -- green phase
    g = green_policy(scenario, s.rng, s.p_green)
    if g is not None:
        activities[g] = Activity.SCAN

    # -- red phase
    if s.red_kind == "bline":
        red = red_bline_policy(s, scenario)
    elif s.red_kind == "meander":
        red = red_meander_policy(s, scenario, s.rng)
    else:  # "none" test mode
        red = RedAction(RedKind.SLEEP)
    impacts = _apply_red(scenario, s, red, activities)

    s.step_index += 1
    truncated = s.step_index >= MAX_STEPS
    s.done = truncated

    raw = compute_reward(scenario, s, impacts=impacts, restores=restores)
    obs = _observe(scenario, s, activities, analysed)
    return s, StepResult(
        observation=obs,
        raw_reward=raw,
        normalized_reward=normalize_reward(raw, scenario),
        terminated=False,
        truncated=truncated,
        info={"invalid_action": False, "red_action": str(red)},
    )


def _mark(activities: dict[str, Activity], host: str, act: Activity) -> None:
    prev = activities.get(host)
    if prev is not None and prev is not act:
        activities[host] = Activity.UNKNOWN
    else:
        activities[host] = act


def _apply_red(
    scenario: Scenario,
    s: WorldState,
    red: RedAction,
    activities: dict[str, Activity],
) -> int:
    """Mutate state with red's action; return the number of successful impacts."""
    if red.kind is RedKind.SLEEP:
        return 0
    if red.kind is RedKind.MOVE:
        s.red_current_subnet = red.target
        s.red_visited.add(red.target)
        return 0

    h = red.target
    hs = s.hosts[h]
    if red.kind is RedKind.SCAN:
        hs.scanned_by_red = True
        if s.rng.random() < DETECTION_PROB:
            _mark(activities, h, Activity.SCAN)
        return 0
    if red.kind is RedKind.EXPLOIT:
        if h in s.decoys:
            s.decoys[h].sprung = True
            hs.red_fails += 1
            _mark(activities, h, Activity.EXPLOIT)  # decoys always report
            return 0
        if s.rng.random() < EXPLOIT_SUCCESS_PROB:
            if hs.compromise is Compromise.NONE:
                hs.compromise = Compromise.USER
            hs.known_to_red = True
            if s.rng.random() < DETECTION_PROB:
                _mark(activities, h, Activity.EXPLOIT)
                hs.suspected = True
        else:
            hs.red_fails += 1
            if s.rng.random() < DETECTION_PROB:
                _mark(activities, h, Activity.EXPLOIT)
        return 0
    if red.kind is RedKind.ESCALATE:
        if hs.compromise is not Compromise.NONE:
            hs.compromise = Compromise.PRIVILEGED
            s.red_position = h
            s.red_current_subnet = scenario.subnet_of(h)
            s.red_visited.add(s.red_current_subnet)
        return 0
    if red.kind is RedKind.IMPACT:
        if hs.compromise is Compromise.PRIVILEGED and h in scenario.operational_servers():
            if s.rng.random() < DETECTION_PROB:
                _mark(activities, h, Activity.EXPLOIT)
            return 1
        return 0
    raise ValueError(f"unknown red action {red}")


# ---------------------------------------------------------------------------
# rewards


def compute_reward(scenario: Scenario, state: WorldState, impacts: int, restores: int) -> float:
    """Raw reward for one step, from the post-step state plus step events."""
    ent = scenario.roles.enterprise_subnet
    n_minor = 0
    n_ent_priv = 0
    for h in scenario.hosts:
        c = state.hosts[h.id].compromise
        if c is Compromise.NONE:
            continue
        if c is Compromise.PRIVILEGED and h.type == "Server" and h.subnet == ent:
            n_ent_priv += 1
        else:
            n_minor += 1
    return -(0.1 * n_minor) - 1.0 * n_ent_priv - 10.0 * impacts - 1.0 * restores


def normalize_reward(raw: float, scenario: Scenario) -> float:
    """Scale by worst-case per-step impact exposure relative to one op server."""
    n_op = max(1, len(scenario.operational_servers()))
    return raw / n_op


# ---------------------------------------------------------------------------
# scripted agents


def green_policy(scenario: Scenario, rng: np.random.Generator, p_green: float) -> str | None:
    """With probability ``p_green``: benign scan activity on a random user host."""
    if rng.random() >= p_green:
        return None
    user_subnets = [s for s in scenario.subnets if s.type == "User"]
    pool: tuple[str, ...]
    if user_subnets:
        pool = tuple(h for s in user_subnets for h in s.hosts)
    else:
        pool = tuple(h.id for h in scenario.hosts if h.id != scenario.roles.blue_host)
    if not pool:
        pool = scenario.host_ids
    return pool[int(rng.integers(len(pool)))]


def _usable(scenario: Scenario, state: WorldState, hid: str) -> bool:
    return (
        hid != scenario.roles.blue_host
        and state.hosts[hid].red_fails < RED_GIVE_UP_FAILS
    )


def _acquire(state: WorldState, hid: str) -> RedAction:
    """Next action in the scan -> exploit -> escalate ladder for one host."""
    hs = state.hosts[hid]
    if not hs.scanned_by_red:
        return RedAction(RedKind.SCAN, hid)
    if hs.compromise is Compromise.NONE:
        return RedAction(RedKind.EXPLOIT, hid)
    return RedAction(RedKind.ESCALATE, hid)


def _subnet_path(scenario: Scenario, src: str, dst: str) -> list[str] | None:
    """BFS along edge direction: red walks the attack surface, not the wire map."""
    if src == dst:
        return [src]
    prev = {src: None}
    frontier = [src]
    while frontier:
        nxt = []
        for cur in frontier:
            for n in scenario.subnet_out_neighbors(cur):
                if n not in prev:
                    prev[n] = cur
                    if n == dst:
                        path = [n]
                        while path[-1] != src:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    nxt.append(n)
        frontier = nxt
    return None


def red_bline_policy(state: WorldState, scenario: Scenario) -> RedAction:
    """Beeline red: shortest subnet path to the operational server, then impact.

    A pure function of (state, scenario): each call re-derives the pivot chain,
    so a restored stepping stone is simply re-taken.
    """
    start = scenario.roles.red_start_host
    if state.hosts[start].compromise is Compromise.NONE:
        return RedAction(RedKind.EXPLOIT, start)

    path = _subnet_path(
        scenario, scenario.subnet_of(start), scenario.roles.operational_subnet
    )
    if path is None:
        return RedAction(RedKind.SLEEP)

    chain: list[str] = []
    for sid in path[1:-1] if len(path) > 1 else []:
        pivot = next(
            (h for h in scenario.hosts_in(sid) if _usable(scenario, state, h)), None
        )
        if pivot is None:
            return RedAction(RedKind.SLEEP)
        chain.append(pivot)
    # final subnet: the designated server first, then any other op server
    op_targets = [scenario.roles.operational_server]
    op_targets += [h for h in scenario.operational_servers() if h not in op_targets]
    final = next((h for h in op_targets if _usable(scenario, state, h)), None)
    if final is None:
        return RedAction(RedKind.SLEEP)
    chain.append(final)

    for hid in chain:
        if state.hosts[hid].compromise is not Compromise.PRIVILEGED:
            return _acquire(state, hid)
    return RedAction(RedKind.IMPACT, final)


def red_meander_policy(
    state: WorldState, scenario: Scenario, rng: np.random.Generator
) -> RedAction:
    """Thorough red: fully privilege the current subnet, then wander onward."""
    start = scenario.roles.red_start_host
    if state.hosts[start].compromise is Compromise.NONE:
        return RedAction(RedKind.EXPLOIT, start)

    cur = state.red_current_subnet
    for hid in scenario.hosts_in(cur):
        if not _usable(scenario, state, hid):
            continue
        if state.hosts[hid].compromise is not Compromise.PRIVILEGED:
            return _acquire(state, hid)

    unexplored = [
        n for n in scenario.subnet_out_neighbors(cur) if n not in state.red_visited
    ]
    if not unexplored:  # widen: anywhere adjacent to conquered ground
        unexplored = sorted(
            {
                n
                for sid in state.red_visited
                for n in scenario.subnet_out_neighbors(sid)
                if n not in state.red_visited
            }
        )
    if unexplored:
        return RedAction(RedKind.MOVE, unexplored[int(rng.integers(len(unexplored)))])

    op = scenario.roles.operational_server
    if state.hosts[op].compromise is Compromise.PRIVILEGED:
        return RedAction(RedKind.IMPACT, op)
    return RedAction(RedKind.SLEEP)


def uniform_random_blue(scenario: Scenario, rng: np.random.Generator) -> BlueAction:
    """Baseline policy: uniform over (host, kind) pairs, no validity masking."""
    kind = BLUE_KINDS[int(rng.integers(len(BLUE_KINDS)))]
    target = scenario.host_ids[int(rng.integers(scenario.n_hosts))]
    return BlueAction(kind=kind, target=target)


# ---------------------------------------------------------------------------
# episode driving and trace logging


@dataclass(frozen=True)
class TraceRow:
    step: int
    blue_kind: str
    blue_target: str
    red_action: str
    raw_reward: float
    normalized_reward: float
    truncated: bool


def run_episode(
    scenario: Scenario,
    red_kind: str,
    blue_policy,
    seed: int,
    p_green: float = P_GREEN_DEFAULT,
    max_steps: int = MAX_STEPS,
):
    """Drive one episode with ``blue_policy(observation, scenario, rng) -> BlueAction``.

    Returns (trace rows, total raw reward, total normalized reward).
    """
    state, obs = reset(scenario, red_kind, seed, p_green)
    policy_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1]))
    rows: list[TraceRow] = []
    total_raw = 0.0
    total_norm = 0.0
    for t in range(max_steps):
        action = blue_policy(obs, scenario, policy_rng)
        state, result = step(scenario, state, action)
        obs = result.observation
        total_raw += result.raw_reward
        total_norm += result.normalized_reward
        rows.append(
            TraceRow(
                step=t,
                blue_kind=action.kind.value,
                blue_target=action.target or "-",
                red_action=result.info["red_action"],
                raw_reward=result.raw_reward,
                normalized_reward=result.normalized_reward,
                truncated=result.truncated,
            )
        )
        if result.truncated or result.terminated:
            break
    return rows, total_raw, total_norm


TRACE_HEADER = (
    "step",
    "blue_kind",
    "blue_target",
    "red_action",
    "raw_reward",
    "normalized_reward",
    "truncated",
)


def write_episode_trace(path, rows: list[TraceRow]) -> None:
    """Tab-separated episode trace, one line per step after a header line."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(TRACE_HEADER) + "\n")
        for r in rows:
            f.write(
                "\t".join(
                    [
                        str(r.step),
                        r.blue_kind,
                        r.blue_target,
                        r.red_action,
                        repr(r.raw_reward),
                        repr(r.normalized_reward),
                        str(int(r.truncated)),
                    ]
                )
                + "\n"
            )
