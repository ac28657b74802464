"""Ad-oriented UI exploration and baseline strategies.

The ad-oriented strategy walks each app depth-first, prioritizing widgets
whose attributes contain call-to-action keywords, records the promoted
package behind every store redirect, and keeps restarting the app to catch
rotating ad pools until no new promoted apps show up.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from . import adsim
from .errors import ExternalDestination, NoPackageError
from .graph import (AdKind, PromotionEdge, PromotionGraph, add_promotion,
                    is_valid_package)


class Strategy(Enum):
    AD_ORIENTED_DFS = "ad-dfs"
    BREADTH_FIRST = "bfs"
    UNIFORM_RANDOM = "random"


DEFAULT_AD_KEYWORDS = ("install", "install now", "download", "get",
                       "play now", "free", "open")


@dataclass(frozen=True)
class AdKeywordList:
    keywords: tuple[str, ...] = DEFAULT_AD_KEYWORDS

    def matches(self, widget: adsim.Widget) -> bool:
        hay = f"{widget.text} {widget.resource_id} {widget.widget_kind}".lower()
        return any(k in hay for k in self.keywords)


def rank_widgets(widgets: list[adsim.Widget],
                 keywords: AdKeywordList) -> list[adsim.Widget]:
    """Keyword-matching widgets first, original order preserved otherwise."""
    hits = [w for w in widgets if keywords.matches(w)]
    rest = [w for w in widgets if not keywords.matches(w)]
    return hits + rest


_MARKET_HOSTS = {"play.google.com"}


def extract_package(url: str) -> str:
    """Package name from a market redirect link.

    Raises NoPackageError when a market URL has no usable id, and
    ExternalDestination for third-party URLs (recorded, not fatal).
    """
    parsed = urlparse(url)
    is_market = parsed.scheme == "market" or parsed.netloc in _MARKET_HOSTS
    if not is_market:
        raise ExternalDestination(url)
    pkg = parse_qs(parsed.query).get("id", [""])[0]
    if not pkg or not is_valid_package(pkg):
        raise NoPackageError(url)
    return pkg


@dataclass(frozen=True)
class AdFinding:
    ad_unit_id: Optional[str]
    dst_package: str
    click_trace: tuple[str, ...]
    restart_index: int
    action_index: int = 0  # app-level action count when found


@dataclass
class ExplorationLog:
    app_id: str
    actions: list[tuple[str, str]] = field(default_factory=list)
    ad_findings: list[AdFinding] = field(default_factory=list)
    external_urls: list[str] = field(default_factory=list)
    restarts: int = 0
    actions_used: int = 0
    partial: bool = False


@dataclass(frozen=True)
class RestartPolicy:
    no_new_limit: int = 3    # consecutive restarts with no new promoted app
    max_restarts: int = 20
    session_budget: int = 200  # actions per session, the 5-minute analog


SessionFactory = Callable[[int], adsim.Session]


class _Budget:
    def __init__(self, total: int):
        self.left = total

    def spend(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        return True


def _record_redirect(log: ExplorationLog, outcome: adsim.InteractionOutcome,
                     trace: tuple[str, ...], restart: int) -> Optional[str]:
    try:
        pkg = extract_package(outcome.url)
    except ExternalDestination as ext:
        log.external_urls.append(ext.url)
        return None
    except NoPackageError:
        return None
    log.ad_findings.append(AdFinding(outcome.ad_unit, pkg, trace, restart,
                                     action_index=log.actions_used))
    return pkg


def _session_dfs(session: adsim.Session, log: ExplorationLog, budget: _Budget,
                 keywords: AdKeywordList, policy: RestartPolicy,
                 restart: int) -> None:
    visited: set[str] = set()
    session_actions = 0

    def spend() -> bool:
        nonlocal session_actions
        if session_actions >= policy.session_budget or not budget.spend():
            return False
        session_actions += 1
        log.actions_used += 1
        return True

    def explore(screen: str, path: tuple[str, ...]) -> None:
        if screen in visited:
            return
        visited.add(screen)
        for widget in rank_widgets(list(session.app.screens[screen]), keywords):
            if not spend():
                return
            session.current_screen = screen  # system back to this screen
            session.active_popup = None
            outcome = adsim.interact(session, widget.id)
            log.actions.append((widget.id, outcome.kind))
            if outcome.kind == "redirected":
                _record_redirect(log, outcome, path + (widget.id,), restart)
            elif outcome.kind == "popup":
                for pw in rank_widgets(list(outcome.popup_widgets), keywords):
                    if pw.action != adsim.ACT_REDIRECT:
                        continue
                    if not spend():
                        return
                    sub = adsim.interact(session, pw.id)
                    log.actions.append((pw.id, sub.kind))
                    if sub.kind == "redirected":
                        _record_redirect(log, sub, path + (widget.id, pw.id),
                                         restart)
                session.active_popup = None
            elif outcome.kind == "navigated" and outcome.screen not in visited:
                explore(outcome.screen, path + (widget.id,))

    explore(session.app.main_screen, ())


def _session_bfs(session: adsim.Session, log: ExplorationLog, budget: _Budget,
                 policy: RestartPolicy, restart: int) -> None:
    paths: dict[str, tuple[str, ...]] = {session.app.main_screen: ()}
    queue = [session.app.main_screen]
    visited: set[str] = set()
    session_actions = 0
    while queue:
        screen = queue.pop(0)
        if screen in visited:
            continue
        visited.add(screen)
        for widget in session.app.screens[screen]:
            if session_actions >= policy.session_budget or not budget.spend():
                return
            session_actions += 1
            log.actions_used += 1
            session.current_screen = screen
            session.active_popup = None
            outcome = adsim.interact(session, widget.id)
            log.actions.append((widget.id, outcome.kind))
            if outcome.kind == "redirected":
                _record_redirect(log, outcome, paths[screen] + (widget.id,),
                                 restart)
            elif outcome.kind == "popup":
                for pw in outcome.popup_widgets:
                    if pw.action != adsim.ACT_REDIRECT:
                        continue
                    if session_actions >= policy.session_budget or not budget.spend():
                        return
                    session_actions += 1
                    log.actions_used += 1
                    sub = adsim.interact(session, pw.id)
                    log.actions.append((pw.id, sub.kind))
                    if sub.kind == "redirected":
                        _record_redirect(log, sub,
                                         paths[screen] + (widget.id, pw.id),
                                         restart)
                session.active_popup = None
            elif outcome.kind == "navigated" and outcome.screen not in visited:
                paths.setdefault(outcome.screen, paths[screen] + (widget.id,))
                queue.append(outcome.screen)


def _session_random(session: adsim.Session, log: ExplorationLog,
                    budget: _Budget, policy: RestartPolicy, restart: int,
                    rng: random.Random) -> None:
    session_actions = 0
    path: tuple[str, ...] = ()
    while session_actions < policy.session_budget and budget.spend():
        session_actions += 1
        log.actions_used += 1
        widgets = session.visible_widgets()
        widget = rng.choice(widgets)
        outcome = adsim.interact(session, widget.id)
        log.actions.append((widget.id, outcome.kind))
        if outcome.kind == "redirected":
            _record_redirect(log, outcome, path + (widget.id,), restart)
        elif outcome.kind == "navigated":
            path = path + (widget.id,)


def explore_app(session_factory: SessionFactory, strategy: Strategy,
                budget: int, restart_policy: RestartPolicy = RestartPolicy(),
                keywords: AdKeywordList = AdKeywordList(),
                seed: int = 0, app_id: str = "") -> ExplorationLog:
    """Restart loop around per-session exploration.

    Stops after `no_new_limit` consecutive restarts without a new promoted
    app, after `max_restarts`, or when the total action budget is spent.
    """
    log = ExplorationLog(app_id=app_id)
    shared = _Budget(budget)
    known: set[str] = set()
    no_new = 0
    restart = 0
    while restart < restart_policy.max_restarts and no_new < restart_policy.no_new_limit \
            and shared.left > 0:
        try:
            session = session_factory(restart)
        except Exception:
            log.partial = True
            restart += 1
            log.restarts = restart
            continue
        if not log.app_id:
            log.app_id = session.app.app_id
        before = len(known)
        if strategy is Strategy.AD_ORIENTED_DFS:
            _session_dfs(session, log, shared, keywords, restart_policy, restart)
        elif strategy is Strategy.BREADTH_FIRST:
            _session_bfs(session, log, shared, restart_policy, restart)
        else:
            rng = random.Random(f"explore:{seed}:{log.app_id}:{restart}")
            _session_random(session, log, shared, restart_policy, restart, rng)
        known.update(f.dst_package for f in log.ad_findings)
        no_new = no_new + 1 if len(known) == before else 0
        restart += 1
        log.restarts = restart
    return log


def run_campaign(ecosystem: adsim.SimEcosystem, seeds: list[str],
                 strategy: Strategy, per_app_budget: int,
                 restart_policy: RestartPolicy = RestartPolicy(),
                 keywords: AdKeywordList = AdKeywordList(),
                 seed: int = 0) -> tuple[PromotionGraph, list[ExplorationLog]]:
    """Frontier expansion: every discovered promoted app present in the
    ecosystem is explored exactly once; absent apps become leaf nodes."""
    graph = PromotionGraph()
    logs: list[ExplorationLog] = []
    frontier = list(dict.fromkeys(seeds))
    explored: set[str] = set()
    for app_id in frontier:
        if app_id not in ecosystem.apps:
            raise adsim.AppNotFoundError(app_id)
    while frontier:
        app_id = frontier.pop(0)
        if app_id in explored or app_id not in ecosystem.apps:
            continue
        explored.add(app_id)
        graph.add_node(app_id)
        log = explore_app(lambda r, a=app_id: adsim.launch(ecosystem, a, restart=r),
                          strategy, per_app_budget, restart_policy, keywords,
                          seed=seed, app_id=app_id)
        logs.append(log)
        for finding in log.ad_findings:
            kind = AdKind.INHERENT
            if finding.ad_unit_id is not None:
                unit = ecosystem.apps[app_id].ad_units.get(finding.ad_unit_id)
                if unit is not None:
                    kind = unit.kind
            add_promotion(graph, PromotionEdge(
                app_id, finding.dst_package, kind, ecosystem.epoch,
                finding.click_trace))
            if finding.dst_package not in explored:
                frontier.append(finding.dst_package)
    return graph, logs


@dataclass
class CoverageReport:
    ad_units_found: int
    ad_units_total: int
    by_kind: dict[str, int]
    unique_ads: int
    curve: list[tuple[int, int]]  # (action checkpoint, unique ads so far)
    avg_clicks_to_finding: float


def coverage_report(logs: list[ExplorationLog],
                    ground_truth: dict[str, dict[str, tuple[str, ...]]],
                    unit_kinds: Optional[dict[str, AdKind]] = None,
                    checkpoint_step: int = 50) -> CoverageReport:
    found_units: set[str] = set()
    ads: set[tuple[str, str, str]] = set()
    events: list[tuple[int, tuple[str, str, str]]] = []
    offset = 0
    traces: list[int] = []
    for log in logs:
        gt_units = ground_truth.get(log.app_id, {})
        for f in log.ad_findings:
            if f.ad_unit_id is not None and f.ad_unit_id in gt_units:
                found_units.add(f.ad_unit_id)
            key = (log.app_id, f.ad_unit_id or "?", f.dst_package)
            events.append((offset + f.action_index, key))
            ads.add(key)
            traces.append(len(f.click_trace))
        offset += log.actions_used
    total_units = sum(len(units) for units in ground_truth.values())
    by_kind: dict[str, int] = {}
    if unit_kinds is not None:
        for uid in found_units:
            kind = unit_kinds.get(uid)
            if kind is not None:
                by_kind[kind.value] = by_kind.get(kind.value, 0) + 1
    events.sort(key=lambda e: e[0])
    curve: list[tuple[int, int]] = []
    seen: set[tuple[str, str, str]] = set()
    idx = 0
    total_actions = offset
    for checkpoint in range(0, total_actions + checkpoint_step, checkpoint_step):
        while idx < len(events) and events[idx][0] <= checkpoint:
            seen.add(events[idx][1])
            idx += 1
        curve.append((checkpoint, len(seen)))
    avg_clicks = sum(traces) / len(traces) if traces else 0.0
    return CoverageReport(ad_units_found=len(found_units),
                          ad_units_total=total_units, by_kind=by_kind,
                          unique_ads=len(ads), curve=curve,
                          avg_clicks_to_finding=avg_clicks)
