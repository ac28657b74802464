"""Deterministic simulated app ecosystem.

Apps are small UI state machines carrying ad units of three kinds: inherent
(visible at launch), pop-up (shown after a trigger interaction), and
custom-made (developer widgets with hardcoded targets). Library-backed units
rotate their recommendation pool across epochs and serve one entry per
restart; ground truth of every pool is recorded for coverage evaluation.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .errors import AppNotFoundError, ConfigError, WidgetNotFoundError
from .graph import AdKind

# widget actions
ACT_NAVIGATE = "navigate"
ACT_REDIRECT = "redirect"
ACT_NOOP = "noop"
ACT_POPUP = "popup"

CTA_TEXTS = ["INSTALL NOW!", "Download", "Get it", "Play now", "Free install"]
FILLER_TEXTS = ["settings", "about", "profile", "help", "legal", "stats",
                "theme", "language", "version", "credits"]
NAV_TEXTS = ["more", "next", "browse", "explore", "details"]


@dataclass
class Widget:
    id: str
    text: str
    resource_id: str
    widget_kind: str
    action: str
    target: Optional[str] = None  # screen id, ad unit id, or url


@dataclass
class AdUnit:
    id: str
    kind: AdKind
    ground_truth: tuple[str, ...]       # full pool across epochs
    pool: tuple[str, ...]               # pool served during the current epoch
    cursor: int = 0
    host_screen: str = ""

    def served(self, restart_index: int) -> str:
        return self.pool[restart_index % len(self.pool)]


@dataclass
class SimApp:
    app_id: str
    screens: dict[str, list[Widget]]
    main_screen: str
    ad_units: dict[str, AdUnit]
    launch_count: int = 0


@dataclass
class SimEcosystem:
    apps: dict[str, SimApp]
    epoch: int = 0
    served_per_epoch: int = 2

    def ground_truth(self) -> dict[str, dict[str, tuple[str, ...]]]:
        return {app_id: {u.id: u.ground_truth for u in app.ad_units.values()}
                for app_id, app in self.apps.items()}


@dataclass
class SimConfig:
    app_count: int = 20
    screens_per_app: int = 4
    inherent_units: int = 1
    popup_units: int = 1
    custom_units: int = 0
    pool_size: int = 3
    served_per_epoch: int = 2
    class_mixture: dict[str, float] = field(
        default_factory=lambda: {"benign": 0.6, "pua": 0.25, "malware": 0.15})
    homophily: float = 0.5
    deep_unit_fraction: float = 0.3     # fraction of units on depth>=2 screens
    fillers_per_screen: int = 3

    def validate(self) -> None:
        if self.app_count < 2:
            raise ConfigError("need at least 2 apps")
        if self.pool_size >= self.app_count:
            raise ConfigError("pool larger than app universe")
        if self.served_per_epoch < 1 or self.served_per_epoch > self.pool_size:
            raise ConfigError("served_per_epoch must be in [1, pool_size]")
        if self.screens_per_app < 1:
            raise ConfigError("need at least one screen per app")
        if abs(sum(self.class_mixture.values()) - 1.0) > 1e-6:
            raise ConfigError("class mixture must sum to 1")


def sim_app_classes(config: SimConfig, seed: int) -> dict[str, str]:
    """Ground-truth class per simulated app id, deterministic in (config, seed)."""
    rng = random.Random(f"classes:{seed}")
    ids = [f"com.sim.app{i:04d}" for i in range(config.app_count)]
    classes = {}
    names = list(config.class_mixture)
    weights = [config.class_mixture[n] for n in names]
    for app_id in ids:
        classes[app_id] = rng.choices(names, weights=weights, k=1)[0]
    return classes


def _market_url(pkg: str, style: int) -> str:
    if style % 2 == 0:
        return f"market://details?id={pkg}"
    return f"https://play.google.com/store/apps/details?id={pkg}&hl=en"


def _sample_pool(rng: random.Random, host: str, host_class: str,
                 classes: dict[str, str], size: int, homophily: float) -> tuple[str, ...]:
    same = [a for a, c in classes.items() if c == host_class and a != host]
    everyone = [a for a in classes if a != host]
    pool: list[str] = []
    while len(pool) < size:
        if same and rng.random() < homophily:
            cand = rng.choice(same)
        else:
            cand = rng.choice(everyone)
        if cand not in pool:
            pool.append(cand)
    return tuple(pool)


def _epoch_pool(unit_gt: tuple[str, ...], epoch: int, served: int) -> tuple[str, ...]:
    n = len(unit_gt)
    k = min(served, n)
    start = (epoch * k) % n
    return tuple(unit_gt[(start + i) % n] for i in range(k))


def generate_ecosystem(config: SimConfig, seed: int) -> SimEcosystem:
    config.validate()
    classes = sim_app_classes(config, seed)
    rng = random.Random(f"ecosystem:{seed}")
    apps: dict[str, SimApp] = {}
    for app_id, app_class in classes.items():
        screens: dict[str, list[Widget]] = {}
        screen_ids = [f"{app_id}/s{j}" for j in range(config.screens_per_app)]
        depth = {screen_ids[0]: 0}
        for j in range(1, len(screen_ids)):
            # chain-with-branches topology so depth>=2 screens exist
            parent = screen_ids[j - 1] if j <= 2 or rng.random() < 0.7 else \
                screen_ids[rng.randrange(j)]
            depth[screen_ids[j]] = depth[parent] + 1
            screens.setdefault(parent, [])
            screens[parent] = screens.get(parent, [])
            nav = Widget(id=f"{screen_ids[j]}:nav", text=rng.choice(NAV_TEXTS),
                         resource_id=f"nav_{j}", widget_kind="Button",
                         action=ACT_NAVIGATE, target=screen_ids[j])
            screens[parent].append(nav)
        for sid in screen_ids:
            screens.setdefault(sid, [])
            for k in range(config.fillers_per_screen):
                screens[sid].append(Widget(
                    id=f"{sid}:filler{k}", text=rng.choice(FILLER_TEXTS),
                    resource_id=f"filler_{k}", widget_kind="TextView",
                    action=ACT_NOOP))

        ad_units: dict[str, AdUnit] = {}
        unit_specs = ([AdKind.INHERENT] * config.inherent_units
                      + [AdKind.POPUP] * config.popup_units
                      + [AdKind.CUSTOM] * config.custom_units)
        deep_screens = [s for s in screen_ids if depth[s] >= 2] or screen_ids
        shallow_screens = [s for s in screen_ids if depth[s] < 2] or screen_ids
        for u_idx, kind in enumerate(unit_specs):
            unit_id = f"{app_id}/u{u_idx}"
            if kind is AdKind.CUSTOM:
                # hardcoded content: a single fixed target, never rotated
                gt = _sample_pool(rng, app_id, app_class, classes, 1,
                                  config.homophily)
                pool = gt
            else:
                gt = _sample_pool(rng, app_id, app_class, classes,
                                  config.pool_size, config.homophily)
                pool = _epoch_pool(gt, 0, config.served_per_epoch)
            host = rng.choice(deep_screens) if rng.random() < config.deep_unit_fraction \
                else rng.choice(shallow_screens)
            unit = AdUnit(id=unit_id, kind=kind, ground_truth=gt, pool=pool,
                          host_screen=host)
            ad_units[unit_id] = unit
            cta = rng.choice(CTA_TEXTS)
            if kind is AdKind.POPUP:
                screens[host].append(Widget(
                    id=f"{unit_id}:trigger", text="sponsored",
                    resource_id=f"ad_trigger_{u_idx}", widget_kind="ImageView",
                    action=ACT_POPUP, target=unit_id))
            else:
                screens[host].append(Widget(
                    id=f"{unit_id}:cta", text=cta,
                    resource_id=f"ad_banner_{u_idx}", widget_kind="Button",
                    action=ACT_REDIRECT, target=unit_id))
        apps[app_id] = SimApp(app_id=app_id, screens=screens,
                              main_screen=screen_ids[0], ad_units=ad_units)
    return SimEcosystem(apps=apps, epoch=0, served_per_epoch=config.served_per_epoch)


def advance_epoch(ecosystem: SimEcosystem) -> SimEcosystem:
    """Rotate every library unit's served pool; custom units stay fixed."""
    ecosystem.epoch += 1
    for app in ecosystem.apps.values():
        for unit in app.ad_units.values():
            if unit.kind is not AdKind.CUSTOM:
                unit.pool = _epoch_pool(unit.ground_truth, ecosystem.epoch,
                                        ecosystem.served_per_epoch)
    return ecosystem


@dataclass
class Session:
    ecosystem: SimEcosystem
    app: SimApp
    current_screen: str
    restart_index: int
    epoch: int
    active_popup: Optional[list[Widget]] = None
    actions_taken: int = 0

    def visible_widgets(self) -> list[Widget]:
        if self.active_popup is not None:
            return self.active_popup
        return self.app.screens[self.current_screen]


def launch(ecosystem: SimEcosystem, app_id: str,
           restart: Optional[int] = None) -> Session:
    app = ecosystem.apps.get(app_id)
    if app is None:
        raise AppNotFoundError(app_id)
    if restart is None:
        restart = app.launch_count
        app.launch_count += 1
    for unit in app.ad_units.values():
        unit.cursor = restart % len(unit.pool)
    return Session(ecosystem=ecosystem, app=app, current_screen=app.main_screen,
                   restart_index=restart, epoch=ecosystem.epoch)


@dataclass(frozen=True)
class InteractionOutcome:
    kind: str  # navigated | redirected | popup | nothing
    screen: Optional[str] = None
    url: Optional[str] = None
    ad_unit: Optional[str] = None
    popup_widgets: tuple[Widget, ...] = ()


def _popup_widgets(unit: AdUnit) -> list[Widget]:
    return [
        Widget(id=f"{unit.id}:cta", text="INSTALL NOW!",
               resource_id="popup_install", widget_kind="Button",
               action=ACT_REDIRECT, target=unit.id),
        Widget(id=f"{unit.id}:close", text="x", resource_id="popup_close",
               widget_kind="ImageView", action=ACT_NOOP),
    ]


def interact(session: Session, widget_id: str) -> InteractionOutcome:
    widget = next((w for w in session.visible_widgets() if w.id == widget_id), None)
    if widget is None:
        raise WidgetNotFoundError(widget_id)
    session.actions_taken += 1
    if widget.action == ACT_NAVIGATE:
        session.active_popup = None
        session.current_screen = widget.target
        return InteractionOutcome(kind="navigated", screen=widget.target)
    if widget.action == ACT_POPUP:
        unit = session.app.ad_units[widget.target]
        session.active_popup = _popup_widgets(unit)
        return InteractionOutcome(kind="popup", ad_unit=unit.id,
                                  popup_widgets=tuple(session.active_popup))
    if widget.action == ACT_REDIRECT:
        if widget.target in session.app.ad_units:
            unit = session.app.ad_units[widget.target]
            pkg = unit.served(session.restart_index)
            url = _market_url(pkg, session.restart_index + sum(map(ord, unit.id)) % 2)
            session.active_popup = None
            return InteractionOutcome(kind="redirected", url=url, ad_unit=unit.id)
        session.active_popup = None
        return InteractionOutcome(kind="redirected", url=widget.target)
    if widget.action == ACT_NOOP and session.active_popup is not None \
            and widget.resource_id == "popup_close":
        session.active_popup = None
    return InteractionOutcome(kind="nothing")


def ecosystem_to_json(ecosystem: SimEcosystem) -> str:
    obj = {
        "epoch": ecosystem.epoch,
        "servedPerEpoch": ecosystem.served_per_epoch,
        "apps": {
            app_id: {
                "mainScreen": app.main_screen,
                "launchCount": app.launch_count,
                "screens": {
                    sid: [{"id": w.id, "text": w.text, "resourceId": w.resource_id,
                           "widgetKind": w.widget_kind, "action": w.action,
                           "target": w.target} for w in widgets]
                    for sid, widgets in app.screens.items()
                },
                "adUnits": {
                    uid: {"kind": u.kind.value, "groundTruth": list(u.ground_truth),
                          "pool": list(u.pool), "cursor": u.cursor,
                          "hostScreen": u.host_screen}
                    for uid, u in app.ad_units.items()
                },
            }
            for app_id, app in ecosystem.apps.items()
        },
    }
    return json.dumps(obj, sort_keys=True, indent=1)


def ecosystem_from_json(text: str) -> SimEcosystem:
    obj = json.loads(text)
    apps: dict[str, SimApp] = {}
    for app_id, a in obj["apps"].items():
        screens = {
            sid: [Widget(id=w["id"], text=w["text"], resource_id=w["resourceId"],
                         widget_kind=w["widgetKind"], action=w["action"],
                         target=w["target"]) for w in widgets]
            for sid, widgets in a["screens"].items()
        }
        units = {
            uid: AdUnit(id=uid, kind=AdKind(u["kind"]),
                        ground_truth=tuple(u["groundTruth"]),
                        pool=tuple(u["pool"]), cursor=u["cursor"],
                        host_screen=u["hostScreen"])
            for uid, u in a["adUnits"].items()
        }
        apps[app_id] = SimApp(app_id=app_id, screens=screens,
                              main_screen=a["mainScreen"], ad_units=units,
                              launch_count=a.get("launchCount", 0))
    return SimEcosystem(apps=apps, epoch=obj["epoch"],
                        served_per_epoch=obj["servedPerEpoch"])
