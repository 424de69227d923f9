"""Procedural scenario generation for the cyber-defense workbench.

A scenario is a static network description: subnets, hosts, ACL edges between
subnets, and the agent placements (red foothold, blue console, green user,
designated operational server).  Scenarios are sampled from bounded
``ScenarioSpec`` ranges, so a curriculum of topologies is just a list of seeds.

The generator follows a fixed sampling chain: subnet count, host count, subnet
types (with replacement), a uniform composition of hosts over subnets (every
subnet gets at least one host), per-host types, role designation, and a random
spanning tree over subnets with extra links.  A directed Operational -> User
ACL edge is added when both subnet types are present, mirroring the classic
CAGE-2 layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCENARIO_VERSION = 1

SUBNET_TYPES = ("User", "Enterprise", "Operational")
HOST_TYPES = ("Server", "Workstation", "Defender")

# Probability of adding a non-tree link between any unlinked subnet pair.
P_EXTRA_EDGE = 0.3


class ScenarioError(ValueError):
    """Raised when scenario text cannot be parsed into a valid structure."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Sampling bounds for procedural generation.

    ``ns_range`` bounds the subnet count, ``nh_range`` the total host count.
    The host-count lower bound is lifted to the sampled subnet count so the
    composition step can give every subnet at least one host.
    """

    ns_range: tuple[int, int] = (3, 5)
    nh_range: tuple[int, int] = (13, 20)
    subnet_type_options: tuple[str, ...] = SUBNET_TYPES

    def __post_init__(self) -> None:
        ns_lo, ns_hi = self.ns_range
        nh_lo, nh_hi = self.nh_range
        if ns_lo < 1 or ns_hi < ns_lo:
            raise ValueError(f"bad subnet-count range {self.ns_range}")
        if nh_lo < 1 or nh_hi < nh_lo:
            raise ValueError(f"bad host-count range {self.nh_range}")
        if not self.subnet_type_options:
            raise ValueError("subnet_type_options must be non-empty")
        for t in self.subnet_type_options:
            if t not in SUBNET_TYPES:
                raise ValueError(f"unknown subnet type {t!r}")


@dataclass(frozen=True)
class Subnet:
    id: str
    type: str
    hosts: tuple[str, ...]


@dataclass(frozen=True)
class Host:
    id: str
    type: str
    subnet: str


@dataclass(frozen=True)
class Roles:
    enterprise_subnet: str
    operational_subnet: str
    operational_server: str
    red_start_host: str
    blue_host: str
    green_host: str


@dataclass(frozen=True)
class Scenario:
    """A concrete network: the static input to the simulator and the graphs."""

    subnets: tuple[Subnet, ...]
    hosts: tuple[Host, ...]
    acl_edges: tuple[tuple[str, str], ...]
    roles: Roles
    version: int = SCENARIO_VERSION

    # -- convenience accessors (no mutation, all derived) ------------------

    def subnet_by_id(self, sid: str) -> Subnet:
        for s in self.subnets:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def host_by_id(self, hid: str) -> Host:
        for h in self.hosts:
            if h.id == hid:
                return h
        raise KeyError(hid)

    @property
    def host_ids(self) -> tuple[str, ...]:
        return tuple(h.id for h in self.hosts)

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    def subnet_of(self, hid: str) -> str:
        return self.host_by_id(hid).subnet

    def hosts_in(self, sid: str) -> tuple[str, ...]:
        return self.subnet_by_id(sid).hosts

    def operational_servers(self) -> tuple[str, ...]:
        """Server-typed hosts in the role-operational subnet (impact targets)."""
        out = [
            h
            for h in self.hosts_in(self.roles.operational_subnet)
            if self.host_by_id(h).type == "Server"
        ]
        return tuple(out)

    def subnet_links(self) -> set[frozenset[str]]:
        """Unordered subnet pairs connected by at least one ACL edge."""
        sids = {s.id for s in self.subnets}
        links = set()
        for a, b in self.acl_edges:
            if a in sids and b in sids and a != b:
                links.add(frozenset((a, b)))
        return links

    def subnet_neighbors(self, sid: str) -> tuple[str, ...]:
        """Subnets reachable from ``sid`` over the symmetric closure of ACL edges."""
        out = []
        for pair in sorted(self.subnet_links(), key=sorted):
            if sid in pair:
                (other,) = pair - {sid}
                out.append(other)
        return tuple(out)

    def subnet_out_neighbors(self, sid: str) -> tuple[str, ...]:
        """Subnets reachable from ``sid`` along edge direction (attack surface)."""
        sids = {s.id for s in self.subnets}
        out = []
        for a, b in self.acl_edges:
            if a == sid and b in sids and b != sid and b not in out:
                out.append(b)
        return tuple(out)

    def first_user_subnet(self) -> str:
        for s in self.subnets:
            if s.type == "User":
                return s.id
        return self.subnets[0].id


# ---------------------------------------------------------------------------
# generation


def _composition(rng: np.random.Generator, total: int, parts: int) -> list[int]:
    """Uniform composition of ``total`` into ``parts`` positive integers."""
    if parts == 1:
        return [total]
    cuts = rng.choice(total - 1, size=parts - 1, replace=False) + 1
    cuts.sort()
    bounds = [0, *cuts.tolist(), total]
    return [bounds[i + 1] - bounds[i] for i in range(parts)]


def generate_scenario(spec: ScenarioSpec, seed: int) -> Scenario:
    """Sample a scenario from ``spec``; identical (spec, seed) -> identical output."""
    rng = np.random.default_rng(seed)
    ns = int(rng.integers(spec.ns_range[0], spec.ns_range[1] + 1))
    nh_lo = max(ns, spec.nh_range[0])
    nh_hi = max(nh_lo, spec.nh_range[1])
    nh = int(rng.integers(nh_lo, nh_hi + 1))

    subnet_types = [str(rng.choice(spec.subnet_type_options)) for _ in range(ns)]
    parts = _composition(rng, nh, ns)

    subnets: list[Subnet] = []
    hosts: list[Host] = []
    for i in range(ns):
        sid = f"s{i}"
        hids = []
        for j in range(parts[i]):
            hid = f"s{i}h{j}"
            htype = str(rng.choice(("Server", "Workstation")))
            hosts.append(Host(id=hid, type=htype, subnet=sid))
            hids.append(hid)
        subnets.append(Subnet(id=sid, type=subnet_types[i], hosts=tuple(hids)))

    # role designation: enterprise subnet, then operational among the rest
    ent_idx = int(rng.integers(ns))
    if ns >= 2:
        rest = [i for i in range(ns) if i != ent_idx]
        op_idx = rest[int(rng.integers(len(rest)))]
    else:
        op_idx = ent_idx
    ent_sid = subnets[ent_idx].id
    op_sid = subnets[op_idx].id

    host_map = {h.id: h for h in hosts}

    # operational server: first Server in the operational subnet, else promote
    op_hosts = subnets[op_idx].hosts
    op_server = next((h for h in op_hosts if host_map[h].type == "Server"), None)
    if op_server is None:
        op_server = op_hosts[0]
        host_map[op_server] = Host(id=op_server, type="Server", subnet=op_sid)

    # red foothold: first host of the first User-typed subnet (subnet 0 fallback)
    red_subnet = next((s for s in subnets if s.type == "User"), subnets[0])
    red_start = red_subnet.hosts[0]

    # blue console: first host of the enterprise subnet, marked as the defender
    blue_host = subnets[ent_idx].hosts[0]
    if blue_host != op_server:
        host_map[blue_host] = Host(id=blue_host, type="Defender", subnet=ent_sid)

    green_host = hosts[int(rng.integers(len(hosts)))].id

    hosts = [host_map[h.id] for h in hosts]

    # connectivity: random recursive tree, extra links, Operational -> User edge
    edges: list[tuple[str, str]] = []
    linked: set[frozenset[str]] = set()

    def link(a: int, b: int) -> None:
        edges.append((subnets[a].id, subnets[b].id))
        edges.append((subnets[b].id, subnets[a].id))
        linked.add(frozenset((subnets[a].id, subnets[b].id)))

    for i in range(1, ns):
        link(i, int(rng.integers(i)))
    for i in range(ns):
        for j in range(i + 1, ns):
            pair = frozenset((subnets[i].id, subnets[j].id))
            if pair not in linked and rng.random() < P_EXTRA_EDGE:
                link(i, j)

    op_typed = next((s for s in subnets if s.type == "Operational"), None)
    user_typed = next((s for s in subnets if s.type == "User"), None)
    if op_typed is not None and user_typed is not None and op_typed.id != user_typed.id:
        if frozenset((op_typed.id, user_typed.id)) not in linked:
            edges.append((op_typed.id, user_typed.id))

    return Scenario(
        subnets=tuple(subnets),
        hosts=tuple(hosts),
        acl_edges=tuple(edges),
        roles=Roles(
            enterprise_subnet=ent_sid,
            operational_subnet=op_sid,
            operational_server=op_server,
            red_start_host=red_start,
            blue_host=blue_host,
            green_host=green_host,
        ),
    )


def vanilla_cc2() -> Scenario:
    """The fixed 13-host reference network (three subnets, one op server)."""
    user_hosts = tuple(f"User{i}" for i in range(5))
    ent_hosts = ("Defender", "Enterprise0", "Enterprise1", "Enterprise2")
    op_hosts = ("Op_Host0", "Op_Host1", "Op_Host2", "Op_Server0")
    subnets = (
        Subnet(id="user", type="User", hosts=user_hosts),
        Subnet(id="enterprise", type="Enterprise", hosts=ent_hosts),
        Subnet(id="operational", type="Operational", hosts=op_hosts),
    )
    hosts = []
    for h in user_hosts:
        hosts.append(Host(id=h, type="Workstation", subnet="user"))
    hosts.append(Host(id="Defender", type="Defender", subnet="enterprise"))
    for h in ent_hosts[1:]:
        hosts.append(Host(id=h, type="Server", subnet="enterprise"))
    for h in op_hosts[:3]:
        hosts.append(Host(id=h, type="Workstation", subnet="operational"))
    hosts.append(Host(id="Op_Server0", type="Server", subnet="operational"))
    acl = (
        ("user", "enterprise"),
        ("enterprise", "user"),
        ("enterprise", "operational"),
        ("operational", "enterprise"),
        ("operational", "user"),  # one-way link, not walkable back
    )
    return Scenario(
        subnets=subnets,
        hosts=tuple(hosts),
        acl_edges=acl,
        roles=Roles(
            enterprise_subnet="enterprise",
            operational_subnet="operational",
            operational_server="Op_Server0",
            red_start_host="User0",
            blue_host="Defender",
            green_host="User1",
        ),
    )


def er_scenario(n_hosts: int, p: float, seed: int) -> Scenario:
    """Erdos-Renyi fallback: one subnet, host-level links sampled iid.

    Stress-testing generator behind the same Scenario type.  With N hosts
    there are 2**(N*(N-1)/2) labelled undirected graphs, so collisions across
    seeds are expected only for tiny N.
    """
    if n_hosts < 1:
        raise ValueError("n_hosts must be >= 1")
    rng = np.random.default_rng(seed)
    hids = [f"h{i}" for i in range(n_hosts)]
    hosts = [Host(id=h, type="Workstation", subnet="s0") for h in hids]
    hosts[0] = Host(id=hids[0], type="Server", subnet="s0")
    edges: list[tuple[str, str]] = []
    for i in range(n_hosts):
        for j in range(i + 1, n_hosts):
            if rng.random() < p:
                edges.append((hids[i], hids[j]))
                edges.append((hids[j], hids[i]))
    return Scenario(
        subnets=(Subnet(id="s0", type="User", hosts=tuple(hids)),),
        hosts=tuple(hosts),
        acl_edges=tuple(edges),
        roles=Roles(
            enterprise_subnet="s0",
            operational_subnet="s0",
            operational_server=hids[0],
            red_start_host=hids[0],
            blue_host=hids[0],
            green_host=hids[-1],
        ),
    )


# ---------------------------------------------------------------------------
# validation


def validate(scenario: Scenario) -> list[str]:
    """Return all invariant violations (empty list means the scenario is sound)."""
    out: list[str] = []
    if scenario.version != SCENARIO_VERSION:
        out.append(f"unsupported version {scenario.version}")

    sids = [s.id for s in scenario.subnets]
    hids = [h.id for h in scenario.hosts]
    if len(set(sids)) != len(sids):
        out.append("duplicate subnet ids")
    if len(set(hids)) != len(hids):
        out.append("duplicate host ids")
    if set(sids) & set(hids):
        out.append("subnet and host id namespaces overlap")
    if not scenario.subnets:
        out.append("no subnets")
        return out
    if not scenario.hosts:
        out.append("no hosts")
        return out

    sid_set, hid_set = set(sids), set(hids)
    for s in scenario.subnets:
        if s.type not in SUBNET_TYPES:
            out.append(f"subnet {s.id} has unknown type {s.type!r}")
        for h in s.hosts:
            if h not in hid_set:
                out.append(f"subnet {s.id} lists unknown host {h}")

    membership: dict[str, int] = {h: 0 for h in hid_set}
    for s in scenario.subnets:
        for h in s.hosts:
            if h in membership:
                membership[h] += 1
    for h in scenario.hosts:
        if h.type not in HOST_TYPES:
            out.append(f"host {h.id} has unknown type {h.type!r}")
        if h.subnet not in sid_set:
            out.append(f"host {h.id} references unknown subnet {h.subnet}")
        elif h.id not in set(scenario.subnet_by_id(h.subnet).hosts):
            out.append(f"host {h.id} missing from its subnet {h.subnet} host list")
        if membership.get(h.id, 0) != 1:
            out.append(f"host {h.id} appears in {membership.get(h.id, 0)} subnets, not 1")

    known = sid_set | hid_set
    for a, b in scenario.acl_edges:
        if a not in known or b not in known:
            out.append(f"acl edge ({a}, {b}) references unknown id")

    r = scenario.roles
    for label, rid, pool in (
        ("enterprise_subnet", r.enterprise_subnet, sid_set),
        ("operational_subnet", r.operational_subnet, sid_set),
        ("operational_server", r.operational_server, hid_set),
        ("red_start_host", r.red_start_host, hid_set),
        ("blue_host", r.blue_host, hid_set),
        ("green_host", r.green_host, hid_set),
    ):
        if rid not in pool:
            out.append(f"role {label} references unknown id {rid}")
            return out

    if len(scenario.subnets) >= 2 and r.enterprise_subnet == r.operational_subnet:
        out.append("enterprise_subnet and operational_subnet must be distinct")
    if scenario.host_by_id(r.operational_server).subnet != r.operational_subnet:
        out.append("operational_server is not in the operational subnet")
    if scenario.host_by_id(r.red_start_host).subnet != scenario.first_user_subnet():
        out.append("red_start_host is not in the first user subnet")

    # subnet-level connectivity over the symmetric closure
    if len(scenario.subnets) > 1:
        seen = {sids[0]}
        frontier = [sids[0]]
        while frontier:
            cur = frontier.pop()
            for nxt in scenario.subnet_neighbors(cur):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        if seen != sid_set:
            out.append("subnet connectivity graph is not connected")
    return out


# ---------------------------------------------------------------------------
# serialization


def serialize_scenario(scenario: Scenario) -> str:
    """UTF-8 JSON, stable key order; ``parse_scenario`` round-trips losslessly."""
    doc = {
        "version": scenario.version,
        "subnets": [
            {"id": s.id, "type": s.type, "hosts": list(s.hosts)} for s in scenario.subnets
        ],
        "hosts": [{"id": h.id, "type": h.type, "subnet": h.subnet} for h in scenario.hosts],
        "acl_edges": [[a, b] for a, b in scenario.acl_edges],
        "roles": {
            "enterprise_subnet": scenario.roles.enterprise_subnet,
            "operational_subnet": scenario.roles.operational_subnet,
            "operational_server": scenario.roles.operational_server,
            "red_start_host": scenario.roles.red_start_host,
            "blue_host": scenario.roles.blue_host,
            "green_host": scenario.roles.green_host,
        },
    }
    return json.dumps(doc, indent=2)


def _expect(doc: dict, key: str, kind: type, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}: missing key {key!r}")
    val = doc[key]
    if kind is int and isinstance(val, bool) or not isinstance(val, kind):
        raise ScenarioError(f"{where}.{key}: expected {kind.__name__}, got {type(val).__name__}")
    return val


def _expect_str_list(val, where: str) -> list[str]:
    if not isinstance(val, list) or any(not isinstance(x, str) for x in val):
        raise ScenarioError(f"{where}: expected a list of strings")
    return val


def parse_scenario(text: str | bytes) -> Scenario:
    """Parse serialized JSON; schema violations raise with the offending path."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"$: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ScenarioError("$: expected a JSON object")
    version = _expect(doc, "version", int, "$")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"$.version: unsupported version {version}")

    subnets = []
    for i, s in enumerate(_expect(doc, "subnets", list, "$")):
        where = f"$.subnets[{i}]"
        if not isinstance(s, dict):
            raise ScenarioError(f"{where}: expected an object")
        subnets.append(
            Subnet(
                id=_expect(s, "id", str, where),
                type=_expect(s, "type", str, where),
                hosts=tuple(_expect_str_list(_expect(s, "hosts", list, where), f"{where}.hosts")),
            )
        )

    hosts = []
    for i, h in enumerate(_expect(doc, "hosts", list, "$")):
        where = f"$.hosts[{i}]"
        if not isinstance(h, dict):
            raise ScenarioError(f"{where}: expected an object")
        hosts.append(
            Host(
                id=_expect(h, "id", str, where),
                type=_expect(h, "type", str, where),
                subnet=_expect(h, "subnet", str, where),
            )
        )

    edges = []
    for i, e in enumerate(_expect(doc, "acl_edges", list, "$")):
        where = f"$.acl_edges[{i}]"
        pair = _expect_str_list(e, where)
        if len(pair) != 2:
            raise ScenarioError(f"{where}: expected a [src, dst] pair")
        edges.append((pair[0], pair[1]))

    rdoc = _expect(doc, "roles", dict, "$")
    roles = Roles(
        enterprise_subnet=_expect(rdoc, "enterprise_subnet", str, "$.roles"),
        operational_subnet=_expect(rdoc, "operational_subnet", str, "$.roles"),
        operational_server=_expect(rdoc, "operational_server", str, "$.roles"),
        red_start_host=_expect(rdoc, "red_start_host", str, "$.roles"),
        blue_host=_expect(rdoc, "blue_host", str, "$.roles"),
        green_host=_expect(rdoc, "green_host", str, "$.roles"),
    )
    return Scenario(
        subnets=tuple(subnets),
        hosts=tuple(hosts),
        acl_edges=tuple(edges),
        roles=roles,
        version=version,
    )
