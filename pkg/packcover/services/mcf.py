from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple
import logging
import math
import time

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from packcover.core.config import settings
from packcover.core.errors import BudgetExhaustedError, NetworkError
from packcover.schemas.network import CommodityFlowOut, EdgeFlowOut, FlowSolutionOut, NetworkFile
from packcover.services.instance import MixedInstance, SparseNonnegMatrix


logger = logging.getLogger(__name__)

ACCEPT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Edge:
	source: int
	target: int
	weight: float
	capacity: float


@dataclass(frozen=True)
class Commodity:
	source: int
	sink: int
	demand: float


class FlowNetwork:
	"""Directed capacitated graph with a cost budget and commodities to route concurrently."""

	def __init__(self, nodes: int, edges: List[Edge], commodities: List[Commodity], budget: float):
		if nodes < 1:
			raise NetworkError("network needs at least one node")
		if budget <= 0:
			raise NetworkError("budget must be positive")
		for k, e in enumerate(edges):
			if not (0 <= e.source < nodes and 0 <= e.target < nodes):
				raise NetworkError(f"edge {k} endpoint out of range")
			if e.source == e.target:
				raise NetworkError(f"edge {k} is a self-loop")
			if e.weight < 0 or e.capacity <= 0:
				raise NetworkError(f"edge {k} needs weight >= 0 and capacity > 0")
		for k, c in enumerate(commodities):
			if not (0 <= c.source < nodes and 0 <= c.sink < nodes):
				raise NetworkError(f"commodity {k} endpoint out of range")
			if c.source == c.sink:
				raise NetworkError(f"commodity {k} has source equal to sink")
			if c.demand <= 0:
				raise NetworkError(f"commodity {k} needs positive demand")
		if not commodities:
			raise NetworkError("no commodities")
		self.nodes = nodes
		self.edges = list(edges)
		self.commodities = list(commodities)
		self.budget = float(budget)
		self.weight = np.array([e.weight for e in edges], dtype=float)
		self.capacity = np.array([e.capacity for e in edges], dtype=float)
		self.demand = np.array([c.demand for c in commodities], dtype=float)
		self.graph = nx.MultiDiGraph()
		self.graph.add_nodes_from(range(nodes))
		for k, e in enumerate(edges):
			self.graph.add_edge(e.source, e.target, key=k)

	@classmethod
	def from_file(cls, raw: NetworkFile) -> "FlowNetwork":
		return cls(
			nodes=raw.nodes,
			edges=[Edge(e.source, e.target, e.weight, e.capacity) for e in raw.edges],
			commodities=[Commodity(c.source, c.sink, c.demand) for c in raw.commodities],
			budget=raw.budget,
		)

	@property
	def m(self) -> int:
		return 1 + len(self.edges) + len(self.commodities)

	def unreachable(self) -> List[int]:
		return [k for k, c in enumerate(self.commodities) if not nx.has_path(self.graph, c.source, c.sink)]


class FlowState:
	"""
	Per-commodity per-edge flow in normalized units (rows compared against N).
	Lengths are kept relative to a common shift so they stay in float range.
	"""

	def __init__(self, net: FlowNetwork):
		self.net = net
		self.flow = np.zeros((len(net.commodities), len(net.edges)))
		self.edge_flow = np.zeros(len(net.edges))
		self.cost = 0.0
		self.shipped = np.zeros(len(net.commodities))
		self.active = np.ones(len(net.commodities), dtype=bool)
		self.shift = 0.0

	def cost_exponent(self) -> float:
		return self.cost / self.net.budget

	def edge_exponents(self) -> np.ndarray:
		return self.edge_flow / self.net.capacity

	def top_exponent(self) -> float:
		return max(self.cost_exponent(), float(self.edge_exponents().max(initial=-math.inf)))

	def refresh_shift(self) -> None:
		self.shift = self.top_exponent()

	def shifted_lengths(self) -> np.ndarray:
		"""l(e) e^{-shift} for every edge."""
		net = self.net
		with np.errstate(under="ignore"):
			cost_term = net.weight / net.budget * math.exp(self.cost_exponent() - self.shift)
			return cost_term + np.exp(self.edge_exponents() - self.shift) / net.capacity

	def log_packing_sum(self) -> float:
		return float(logsumexp(np.append(self.edge_exponents(), self.cost_exponent())))

	def log_covering_sum(self) -> float:
		"""ln sum over active commodities of e^{-shipped_i/d_i}."""
		if not self.active.any():
			return -math.inf
		return float(logsumexp(-(self.shipped / self.net.demand)[self.active]))

	def log_global(self) -> float:
		return self.log_packing_sum() - self.log_covering_sum()

	def log_threshold(self, i: int, log_g: float, epsilon: float) -> float:
		"""ln of (1+eps) g e^{-shipped_i/d_i}/d_i."""
		d = self.net.demand[i]
		return math.log1p(epsilon) + log_g - self.shipped[i] / d - math.log(d)

	def augment(self, i: int, path: List[int], delta: float) -> None:
		self.flow[i, path] += delta
		self.edge_flow[path] += delta
		self.cost += delta * float(self.net.weight[path].sum())
		self.shipped[i] += delta


def edge_length(net: FlowNetwork, state: FlowState, e: int) -> float:
	"""l(e) = (w_e/W) e^{w.f/W} + e^{f(e)/mu_e}/mu_e, unshifted (inf once it leaves float range)."""
	with np.errstate(over="ignore"):
		return float(net.weight[e] / net.budget * np.exp(state.cost_exponent()) + np.exp(state.edge_exponents()[e]) / net.capacity[e])


def log_path_length(state: FlowState, path: List[int], lengths: Optional[np.ndarray] = None) -> float:
	if lengths is None:
		lengths = state.shifted_lengths()
	total = float(lengths[path].sum())
	return (math.log(total) if total > 0 else -math.inf) + state.shift


def accept_path(state: FlowState, path: List[int], i: int, log_g: float, epsilon: float, lengths: Optional[np.ndarray] = None) -> bool:
	"""Length of the path is at most (1+eps) g e^{-shipped_i/d_i}/d_i (equality accepted)."""
	lhs = log_path_length(state, path, lengths)
	rhs = state.log_threshold(i, log_g, epsilon)
	return lhs <= rhs + ACCEPT_TOLERANCE * max(1.0, abs(rhs))


def log_local(state: FlowState, path: List[int], i: int) -> float:
	"""ln local_p(f), evaluated straight from the definition."""
	net = state.net
	terms = [math.log(net.weight[path].sum() / net.budget) + state.cost_exponent()] if net.weight[path].sum() > 0 else []
	terms.extend(state.edge_exponents()[path] - np.log(net.capacity[path]))
	numerator = float(logsumexp(terms))
	d = net.demand[i]
	return numerator - (-state.shipped[i] / d - math.log(d))


def shortest_path(net: FlowNetwork, lengths: np.ndarray, i: int) -> Tuple[float, List[int]]:
	"""Dijkstra on the multigraph; each hop takes its cheapest parallel edge."""
	def weight(u, v, data):
		return min(lengths[k] for k in data)

	c = net.commodities[i]
	dist, nodes = nx.single_source_dijkstra(net.graph, c.source, c.sink, weight=weight)
	path = []
	for u, v in zip(nodes[:-1], nodes[1:]):
		keys = list(net.graph[u][v])
		path.append(min(keys, key=lambda k: (lengths[k], k)))
	return float(dist), path


def step_size(net: FlowNetwork, path: List[int], i: int, epsilon: float) -> float:
	"""delta = eps min{d_i, W/w(p), min mu_e on p}."""
	w_p = float(net.weight[path].sum())
	budget_cap = net.budget / w_p if w_p > 0 else math.inf
	return epsilon * min(net.demand[i], budget_cap, float(net.capacity[path].min()))


@dataclass
class FlowSolution:
	status: str
	flow: Optional[np.ndarray]
	stats: Dict[str, Any]

	@property
	def feasible(self) -> bool:
		return self.status == "feasible"

	@property
	def edge_flow(self) -> np.ndarray:
		return self.flow.sum(axis=0)

	def shipped(self, net: FlowNetwork) -> np.ndarray:
		"""Net outflow at each commodity's source."""
		out = np.zeros(len(net.commodities))
		for i, c in enumerate(net.commodities):
			for k, e in enumerate(net.edges):
				if e.source == c.source:
					out[i] += self.flow[i, k]
				if e.target == c.source:
					out[i] -= self.flow[i, k]
		return out

	def cost(self, net: FlowNetwork) -> float:
		return float(net.weight @ self.edge_flow)

	def conservation_error(self, net: FlowNetwork) -> float:
		"""Largest relative imbalance at a node other than a commodity's endpoints."""
		worst = 0.0
		for i, c in enumerate(net.commodities):
			balance = np.zeros(net.nodes)
			for k, e in enumerate(net.edges):
				balance[e.source] -= self.flow[i, k]
				balance[e.target] += self.flow[i, k]
			balance[[c.source, c.sink]] = 0.0
			scale = max(float(self.flow[i].max(initial=0.0)), 1.0)
			worst = max(worst, float(np.abs(balance).max()) / scale)
		return worst

	def to_schema(self, net: FlowNetwork) -> FlowSolutionOut:
		if not self.feasible:
			return FlowSolutionOut(status=self.status, stats=self.stats)
		shipped = self.shipped(net)
		commodities = [
			CommodityFlowOut(
				commodity=i,
				shipped=float(shipped[i]),
				edges=[EdgeFlowOut(edge=k, flow=float(v)) for k, v in enumerate(self.flow[i]) if v > 0],
			)
			for i in range(len(net.commodities))
		]
		return FlowSolutionOut(
			status="feasible",
			edge_flow=[float(v) for v in self.edge_flow],
			cost=self.cost(net),
			commodities=commodities,
			stats=self.stats,
		)


def solve_mcf(net: FlowNetwork, epsilon: float, max_augmentations: int = settings.max_increments) -> FlowSolution:
	"""Phased concurrent flow: per commodity, augment along shortest paths while they stay eligible."""
	started = time.perf_counter()
	N = 2 * math.log(net.m) / epsilon
	stats: Dict[str, Any] = {"epsilon": epsilon, "N": N, "m": net.m, "phases": 0, "augmentations": 0, "shortest_path_calls": 0}

	missing = net.unreachable()
	if missing:
		stats["reason"] = f"commodity {missing[0]} has no path"
		stats["wall_time"] = time.perf_counter() - started
		return FlowSolution("infeasible", None, stats)

	state = FlowState(net)
	tol = settings.infeasibility_tolerance
	while state.active.any():
		state.refresh_shift()
		log_g = state.log_global()
		lengths = state.shifted_lengths()
		best = math.inf
		for i in np.flatnonzero(state.active):
			_, path = shortest_path(net, lengths, int(i))
			stats["shortest_path_calls"] += 1
			best = min(best, log_local(state, path, int(i)) - log_g)
		if best > tol:
			stats["reason"] = "shortest path ratio exceeds g at phase start"
			stats["log_ratio"] = best
			stats["wall_time"] = time.perf_counter() - started
			logger.info("flow infeasible in phase %d", stats["phases"] + 1)
			return FlowSolution("infeasible", None, stats)
		stats["phases"] += 1
		for i in range(len(net.commodities)):
			while state.active[i]:
				if state.top_exponent() > state.shift + settings.shift_headroom:
					state.refresh_shift()
				lengths = state.shifted_lengths()
				_, path = shortest_path(net, lengths, i)
				stats["shortest_path_calls"] += 1
				if not accept_path(state, path, i, log_g, epsilon, lengths):
					break
				if stats["augmentations"] >= max_augmentations:
					raise BudgetExhaustedError(stats["augmentations"])
				state.augment(i, path, step_size(net, path, i, epsilon))
				stats["augmentations"] += 1
				if state.shipped[i] >= N * net.demand[i]:
					state.active[i] = False

	solution = FlowSolution("feasible", state.flow / N, stats)
	stats["max_capacity_ratio"] = float((solution.edge_flow / net.capacity).max(initial=0.0))
	stats["budget_ratio"] = solution.cost(net) / net.budget
	stats["min_demand_ratio"] = float((state.shipped / N / net.demand).min())
	stats["wall_time"] = time.perf_counter() - started
	logger.info("flow feasible after %d augmentations in %d phases", stats["augmentations"], stats["phases"])
	return solution


def build_path_instance(net: FlowNetwork, max_paths: int = 6) -> Tuple[MixedInstance, List[Tuple[int, List[int]]]]:
	"""
	Explicit path-variable instance: one variable per simple path.
	Packing rows: budget, then one per edge; covering rows: one per commodity.
	"""
	paths: List[Tuple[int, List[int]]] = []
	for i, c in enumerate(net.commodities):
		found = [[k for _, _, k in edge_path] for edge_path in nx.all_simple_edge_paths(net.graph, c.source, c.sink)]
		if len(found) > max_paths:
			raise NetworkError(f"commodity {i} has more than {max_paths} simple paths")
		paths.extend((i, p) for p in found)
	P_entries = []
	C_entries = []
	for j, (i, p) in enumerate(paths):
		w_p = float(net.weight[p].sum())
		if w_p > 0:
			P_entries.append((0, j, w_p))
		P_entries.extend((1 + k, j, 1.0) for k in p)
		C_entries.append((i, j, 1.0))
	P = SparseNonnegMatrix(1 + len(net.edges), len(paths), P_entries)
	C = SparseNonnegMatrix(len(net.commodities), len(paths), C_entries)
	p = np.concatenate([[net.budget], net.capacity])
	return MixedInstance(P, p, C, net.demand.copy()), paths


def path_flows_to_edges(net: FlowNetwork, paths: List[Tuple[int, List[int]]], x: np.ndarray) -> np.ndarray:
	flow = np.zeros((len(net.commodities), len(net.edges)))
	for value, (i, p) in zip(x, paths):
		flow[i, p] += value
	return flow
