"""Simulated Android device: intent handlers for the bundled functions over a DeviceState.

Handlers that produce something another call may consume return it as their value:

* ``ACTION_INSERT_CONTACT`` and ``get_contact_uri`` return a contact URI
* ``get_contact_info`` returns the requested contact field
* ``ACTION_IMAGE_CAPTURE`` / ``ACTION_VIDEO_CAPTURE`` return the media URI

Every other handler returns nothing.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from typing import Any, Callable

from .calls import CallPlan, FunctionCall, Ref, iter_refs, map_refs, topo_order
from .errors import CorruptSnapshot, HandlerError, UnknownFunction, UnresolvedRef
from .schema import SchemaRegistry, load_default_registry, value_matches_tag

CONTACT_URI = "content://com.android.contacts/contacts/{}"
IMAGE_URI = "content://media/external/images/{}"
VIDEO_URI = "content://media/external/video/{}"
WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
SETTINGS_PAGES = (
    "general", "wifi", "bluetooth", "location", "display", "sound",
    "airplane_mode", "battery_saver", "date", "apps",
)
SEARCH_ENGINES = ("google", "bing", "duckduckgo")
_PHONE = re.compile(r"\+?[0-9][0-9 ()\-*#]*")
_UNIT_SECONDS = {
    "s": 1, "sec": 1, "secs": 1, "second": 1, "seconds": 1,
    "m": 60, "min": 60, "mins": 60, "minute": 60, "minutes": 60,
    "h": 3600, "hr": 3600, "hrs": 3600, "hour": 3600, "hours": 3600,
}
_DURATION_PART = re.compile(r"(\d+(?:\.\d+)?)\s*([a-z]+)")


@dataclass
class DeviceState:
    alarms: list[dict] = field(default_factory=list)
    timers: list[dict] = field(default_factory=list)
    calendar: list[dict] = field(default_factory=list)
    contacts: list[dict] = field(default_factory=list)
    call_log: list[str] = field(default_factory=list)
    sms_outbox: list[dict] = field(default_factory=list)
    email_outbox: list[dict] = field(default_factory=list)
    search_history: list[dict] = field(default_factory=list)
    media: list[dict] = field(default_factory=list)
    open_screen: str | None = None
    camera_session: dict | None = None


@dataclass(frozen=True)
class IntentResult:
    call_id: int
    function: str
    outcome: str = "ok"
    value: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def to_dict(self) -> dict[str, Any]:
        return {"call_id": self.call_id, "function": self.function, "outcome": self.outcome,
                "value": self.value, "error": self.error}


def parse_duration(text: str) -> int:
    """Seconds in a duration such as "30 minutes" or "1 hour 15 min"."""
    cleaned = text.strip().lower().replace(",", " ").replace(" and ", " ")
    parts = _DURATION_PART.findall(cleaned)
    if not parts or _DURATION_PART.sub("", cleaned).strip():
        raise HandlerError(f"cannot parse duration {text!r}")
    total = 0.0
    for number, unit in parts:
        if unit not in _UNIT_SECONDS:
            raise HandlerError(f"unknown duration unit {unit!r}")
        total += float(number) * _UNIT_SECONDS[unit]
    if total <= 0 or total != int(total):
        raise HandlerError(f"duration must be a positive whole number of seconds: {text!r}")
    return int(total)


def _iso(value: str, what: str) -> datetime:
    try:
        return datetime.fromisoformat(value)
    except (TypeError, ValueError):
        raise HandlerError(f"{what} is not an ISO 8601 timestamp: {value!r}") from None


def _phone(number: str) -> str:
    if not _PHONE.fullmatch(number.strip()):
        raise HandlerError(f"invalid phone number {number!r}")
    return number.strip()


def _strings(values: list | None, what: str) -> list[str]:
    values = values or []
    if not all(isinstance(v, str) for v in values):
        raise HandlerError(f"{what} must be a list of strings")
    return list(values)


def _find_contact(state: DeviceState, name: str) -> int:
    for i, c in enumerate(state.contacts):
        if c["name"].casefold() == name.strip().casefold():
            return i
    raise HandlerError(f"no contact named {name!r}")


# handlers mutate the (already copied) state and return an optional value


def _set_alarm(s: DeviceState, EXTRA_HOUR, EXTRA_MINUTE, EXTRA_MESSAGE, EXTRA_DAYS, EXTRA_SKIP_UI):
    if not 0 <= EXTRA_HOUR <= 23:
        raise HandlerError(f"EXTRA_HOUR out of range: {EXTRA_HOUR}")
    if not 0 <= EXTRA_MINUTE <= 59:
        raise HandlerError(f"EXTRA_MINUTE out of range: {EXTRA_MINUTE}")
    days = _strings(EXTRA_DAYS, "EXTRA_DAYS")
    bad = [d for d in days if d.lower() not in WEEKDAYS]
    if bad:
        raise HandlerError(f"unknown weekdays {bad}")
    s.alarms.append({"hour": EXTRA_HOUR, "minute": EXTRA_MINUTE, "message": EXTRA_MESSAGE or None,
                     "days": [d.lower() for d in days]})


def _set_timer(s: DeviceState, duration, EXTRA_MESSAGE, EXTRA_SKIP_UI):
    s.timers.append({"duration_seconds": parse_duration(duration), "label": EXTRA_MESSAGE or None})


def _show(screen: str):
    def handler(s: DeviceState):
        s.open_screen = screen
    return handler


def _insert_event(s: DeviceState, TITLE, EXTRA_EVENT_BEGIN_TIME, EXTRA_EVENT_END_TIME, DESCRIPTION, EVENT_LOCATION, EXTRA_EMAIL):
    if not TITLE.strip():
        raise HandlerError("event title is empty")
    begin = _iso(EXTRA_EVENT_BEGIN_TIME, "EXTRA_EVENT_BEGIN_TIME")
    end = _iso(EXTRA_EVENT_END_TIME, "EXTRA_EVENT_END_TIME")
    if end < begin:
        raise HandlerError("event ends before it begins")
    s.calendar.append({"title": TITLE, "begin": begin.isoformat(), "end": end.isoformat(),
                       "location": EVENT_LOCATION or None, "description": DESCRIPTION or None,
                       "attendees": _strings(EXTRA_EMAIL, "EXTRA_EMAIL")})


def _insert_contact(s: DeviceState, name, phone, email, company):
    if not name.strip():
        raise HandlerError("contact name is empty")
    s.contacts.append({"name": name.strip(), "phone": _phone(phone) if phone else "",
                       "email": email, "company": company})
    return CONTACT_URI.format(len(s.contacts))


def _contact_info(s: DeviceState, name, key):
    if key not in ("phone", "email", "company"):
        raise HandlerError(f"unknown contact field {key!r}")
    value = s.contacts[_find_contact(s, name)][key]
    if not value:
        raise HandlerError(f"contact {name!r} has no {key}")
    return value


def _contact_uri(s: DeviceState, name):
    return CONTACT_URI.format(_find_contact(s, name) + 1)


def _view_contact(s: DeviceState, contact_uri):
    prefix = CONTACT_URI.format("")
    index = contact_uri[len(prefix):] if contact_uri.startswith(prefix) else ""
    if not index.isdigit() or not 1 <= int(index) <= len(s.contacts):
        raise HandlerError(f"no contact at {contact_uri!r}")
    s.open_screen = f"contact:{contact_uri}"


def _dial(s: DeviceState, phone_number):
    s.call_log.append(_phone(phone_number))


def _web_search(s: DeviceState, query, engine):
    if engine not in SEARCH_ENGINES:
        raise HandlerError(f"unsupported search engine {engine!r}")
    if not query.strip():
        raise HandlerError("empty search query")
    s.search_history.append({"source": "web", "engine": engine, "query": query})


def _search_location(s: DeviceState, query):
    if not query.strip():
        raise HandlerError("empty map query")
    s.search_history.append({"source": "maps", "query": query})


def _capture(mode: str, template: str):
    def handler(s: DeviceState):
        n = sum(1 for m in s.media if m["kind"] == mode) + 1
        uri = template.format(n)
        s.camera_session = {"mode": mode}
        s.media.append({"kind": mode, "uri": uri})
        return uri
    return handler


def _open_settings(s: DeviceState, setting_type):
    if setting_type not in SETTINGS_PAGES:
        raise HandlerError(f"unknown settings page {setting_type!r}")
    s.open_screen = f"settings:{setting_type}"


def _send_message(s: DeviceState, phone_number, content, attachments):
    s.sms_outbox.append({"to": _phone(phone_number), "content": content,
                         "attachments": _strings(attachments, "attachments")})


def _send_email(s: DeviceState, to, subject, body, cc, bcc, attachments):
    recipients = _strings(to, "to")
    if not recipients:
        raise HandlerError("email needs at least one recipient")
    for addr in recipients + _strings(cc, "cc") + _strings(bcc, "bcc"):
        if "@" not in addr:
            raise HandlerError(f"invalid email address {addr!r}")
    s.email_outbox.append({"to": recipients, "cc": _strings(cc, "cc"), "bcc": _strings(bcc, "bcc"),
                           "subject": subject, "body": body, "attachments": _strings(attachments, "attachments")})


@dataclass(frozen=True)
class Handler:
    fn: Callable[..., Any]
    touches: frozenset[str]


def _h(fn, *touches: str) -> Handler:
    return Handler(fn, frozenset(touches))


HANDLERS: dict[str, Handler] = {
    "ACTION_SET_ALARM": _h(_set_alarm, "alarms"),
    "ACTION_SET_TIMER": _h(_set_timer, "timers"),
    "ACTION_SHOW_ALARMS": _h(_show("alarms"), "open_screen"),
    "ACTION_SHOW_TIMERS": _h(_show("timers"), "open_screen"),
    "ACTION_INSERT_EVENT": _h(_insert_event, "calendar"),
    "ACTION_INSERT_CONTACT": _h(_insert_contact, "contacts"),
    "get_contact_info": _h(_contact_info),
    "get_contact_uri": _h(_contact_uri),
    "ACTION_VIEW_CONTACT": _h(_view_contact, "open_screen"),
    "dial": _h(_dial, "call_log"),
    "web_search": _h(_web_search, "search_history"),
    "search_location": _h(_search_location, "search_history"),
    "ACTION_IMAGE_CAPTURE": _h(_capture("photo", IMAGE_URI), "camera_session", "media"),
    "ACTION_VIDEO_CAPTURE": _h(_capture("video", VIDEO_URI), "camera_session", "media"),
    "open_settings": _h(_open_settings, "open_screen"),
    "send_message": _h(_send_message, "sms_outbox"),
    "send_email": _h(_send_email, "email_outbox"),
}
for _page in ("wifi", "bluetooth", "location", "display", "sound", "airplane_mode", "battery_saver"):
    HANDLERS[f"open_{_page}_settings"] = _h(_show(f"settings:{_page}"), "open_screen")


def _bind_arguments(call: FunctionCall, registry: SchemaRegistry) -> dict[str, Any]:
    schema = registry[call.name]
    for key, value in call.arguments.items():
        spec = schema.arguments.get(key)
        if spec is None:
            raise HandlerError(f"{call.name} has no parameter {key!r}")
        if not value_matches_tag(value, spec.type_tag):
            raise HandlerError(f"{call.name}.{key} expects {spec.type_tag}, got {value!r}")
    bound = {}
    for key, spec in schema.arguments.items():
        if key in call.arguments:
            bound[key] = call.arguments[key]
        elif spec.required:
            raise HandlerError(f"{call.name} is missing required argument {key!r}")
        else:
            bound[key] = copy.deepcopy(spec.default)
    return bound


def dispatch(
    call: FunctionCall, state: DeviceState, registry: SchemaRegistry | None = None
) -> tuple[IntentResult, DeviceState]:
    """Fire one call; returns the result and a new state (the input is left untouched)."""
    registry = registry or load_default_registry()
    if call.name not in HANDLERS or call.name not in registry:
        raise UnknownFunction(call.name)
    if any(True for _ in iter_refs(call.arguments)):
        raise UnresolvedRef(f"call {call.id} still contains references")
    args = _bind_arguments(call, registry)
    new_state = copy.deepcopy(state)
    value = HANDLERS[call.name].fn(new_state, **args)
    return IntentResult(call.id, call.name, "ok", value), new_state


def execute_plan(
    plan: CallPlan, state: DeviceState, registry: SchemaRegistry | None = None
) -> tuple[list[IntentResult], DeviceState]:
    """Run calls in dependency order, substituting referenced return values.

    The first handler error stops the plan; its error result is the last entry
    and the returned state holds only the completed calls.
    """
    order = topo_order(plan)
    values: dict[int, Any] = {}
    results: list[IntentResult] = []

    def resolve(ref: Ref) -> Any:
        if values.get(ref.id) is None:
            raise UnresolvedRef(f"call {ref.id} produced no value to substitute")
        return values[ref.id]

    for call_id in order:
        call = plan.call(call_id)
        literal = FunctionCall(call.id, call.name, map_refs(call.arguments, resolve))
        try:
            result, state = dispatch(literal, state, registry)
        except HandlerError as exc:
            results.append(IntentResult(call.id, call.name, "error", None, str(exc)))
            break
        values[call.id] = result.value
        results.append(result)
    return results, state


# snapshots


def snapshot(state: DeviceState) -> str:
    return json.dumps(asdict(state), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def restore(text: str) -> DeviceState:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from exc
    names = {f.name for f in fields(DeviceState)}
    if not isinstance(data, dict) or set(data) != names:
        raise CorruptSnapshot("snapshot fields do not match the device state layout")
    for f in fields(DeviceState):
        value = data[f.name]
        ok = isinstance(value, list) if f.name not in ("open_screen", "camera_session") else (
            value is None or isinstance(value, str if f.name == "open_screen" else dict))
        if not ok:
            raise CorruptSnapshot(f"field {f.name!r} has the wrong type")
    return DeviceState(**data)
