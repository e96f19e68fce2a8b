"""XACML subset: requests, policies, targets, rules, obligations.

Documents use the element vocabulary of XACML 2.0 (``Subject``,
``ResourceMatch``, ``AttributeAssignment``...) restricted to the match and
condition functions the framework needs: ``string-equal``, ``string-subset``
and ``string-bag``.  Anything else raises :class:`UnsupportedFeature`.

Parsed documents are frozen dataclasses built from tuples, so they compare
by value, hash, and can be shared freely between threads.
"""

from __future__ import annotations

import enum
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional, Union
from xml.sax.saxutils import escape, quoteattr

from .errors import (
    DuplicateObligation,
    MissingAttribute,
    MissingObligationAttribute,
    ParseError,
    UnsupportedFeature,
)
from .values import is_time

# -- vocabulary ---------------------------------------------------------------

XSD = "http://www.w3.org/2001/XMLSchema#"
STRING = XSD + "string"
INTEGER = XSD + "integer"
DOUBLE = XSD + "double"
TIME = XSD + "time"

_TYPE_ALIASES = {
    "string": STRING,
    "integer": INTEGER,
    "double": DOUBLE,
    "time": TIME,
    "datetime": TIME,
}

SUBJECT_NAME = "exacml:subject:name-id"
SUBJECT_ROLE = "exacml:subject:role-id"
DATABASE_ID = "exacml:rdbms-database-id"
TABLE_ID = "exacml:rdbms-table-id"
COLUMN_ID = "exacml:rdbms-column-id"
DATA_VALUE_ID = "exacml:data-value-id"
ACTION_ID = "exacml:action-id"

SECTIONS = ("subject", "resource", "action")

KNOWN_ATTRIBUTES = {
    "subject": {SUBJECT_NAME, SUBJECT_ROLE},
    "resource": {DATABASE_ID, TABLE_ID, COLUMN_ID, DATA_VALUE_ID},
    "action": {ACTION_ID},
}

FUNCTION_PREFIX = "urn:oasis:names:tc:xacml:1.0:function:"
STRING_EQUAL = FUNCTION_PREFIX + "string-equal"
STRING_SUBSET = FUNCTION_PREFIX + "string-subset"
STRING_BAG = FUNCTION_PREFIX + "string-bag"
_FUNCTIONS = {STRING_EQUAL, STRING_SUBSET, STRING_BAG}

PERMIT_OVERRIDES = "permit-overrides"
FIRST_APPLICABLE = "first-applicable"
RULE_COMBINING_PREFIX = "urn:oasis:names:tc:xacml:1.0:rule-combining-algorithm:"

# Obligation kinds and the assignment ids each one accepts.
AGGREGATION = "exacml:obligation:column-aggregation"
SELECTION = "exacml:obligation:simple-selection"
SLIDING_WINDOW = "exacml:obligation:column-sliding-window"
APPROXIMATION = "exacml:obligation:column-approximation"

AGGREGATION_FN = "exacml:obligation:aggregation-id"
SELECTION_EXPR = "exacml:obligation:selection-id"
WINDOW_COLUMN = "exacml:obligation:sliding-window-column-id"
WINDOW_START = "exacml:obligation:sliding-window-start-id"
WINDOW_END = "exacml:obligation:sliding-window-end-id"
WINDOW_SIZE = "exacml:obligation:sliding-window-size-id"
WINDOW_STEP = "exacml:obligation:sliding-window-step-id"
WINDOW_UNIT = "exacml:obligation:sliding-window-unit-id"
APPROX_COLUMNS = "exacml:obligation:approximation-param-id"
APPROX_DISTANCE = "exacml:obligation:approximation-value-id"

OBLIGATION_ATTRIBUTES = {
    AGGREGATION: {"required": {AGGREGATION_FN}, "optional": set()},
    SELECTION: {"required": {SELECTION_EXPR}, "optional": set()},
    SLIDING_WINDOW: {
        "required": {WINDOW_COLUMN, WINDOW_START, WINDOW_END, WINDOW_SIZE, WINDOW_STEP},
        "optional": {WINDOW_UNIT},
    },
    APPROXIMATION: {"required": {APPROX_COLUMNS, APPROX_DISTANCE}, "optional": set()},
}

AGGREGATE_FUNCTIONS = ("avg", "min", "max", "count", "sum")
WINDOW_UNITS = ("hours", "minutes")


def normalize_attribute_id(attribute_id):
    """Canonical spelling of an attribute id (``rdmb-`` is read as ``rdbms-``)."""
    attribute_id = attribute_id.strip()
    if attribute_id.startswith("exacml:rdmb-"):
        return "exacml:rdbms-" + attribute_id[len("exacml:rdmb-"):]
    return attribute_id


def normalize_data_type(data_type):
    data_type = (data_type or STRING).strip().strip("{}")
    if data_type.lower() in _TYPE_ALIASES:
        return _TYPE_ALIASES[data_type.lower()]
    if data_type.startswith("http://wwww."):
        data_type = "http://www." + data_type[len("http://wwww."):]
    if data_type == XSD + "dateTime":
        return TIME
    return data_type


def normalize_function(function_id):
    function_id = function_id.strip()
    if ":" not in function_id:
        function_id = FUNCTION_PREFIX + function_id
    return function_id


def normalize_combining(algorithm):
    name = algorithm.strip().rsplit(":", 1)[-1]
    if name not in (PERMIT_OVERRIDES, FIRST_APPLICABLE):
        raise UnsupportedFeature(f"combining algorithm {algorithm!r}")
    return name


# -- data model ---------------------------------------------------------------

class Decision(enum.Enum):
    PERMIT = "Permit"
    DENY = "Deny"
    NOT_APPLICABLE = "NotApplicable"
    INDETERMINATE = "Indeterminate"

    @classmethod
    def parse(cls, text):
        key = text.strip().replace(" ", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        if key == "intermediate":
            return cls.INDETERMINATE
        raise ValueError(f"unknown decision {text!r}")


@dataclass(frozen=True)
class AttributeValue:
    data_type: str
    value: str

    def __post_init__(self):
        if not _value_parses(self.data_type, self.value):
            raise ParseError(f"value {self.value!r} does not parse as {self.data_type}")


def _value_parses(data_type, text):
    if data_type == STRING:
        return True
    if data_type == INTEGER:
        return re.fullmatch(r"[+-]?\d+", text) is not None
    if data_type == DOUBLE:
        try:
            float(text)
        except ValueError:
            return False
        return True
    if data_type == TIME:
        return is_time(text)
    return False


def string_value(text):
    return AttributeValue(STRING, text)


@dataclass(frozen=True)
class AccessRequest:
    """Subject, resource and action attributes of one access request.

    Each section is a tuple of ``(attribute_id, AttributeValue)`` pairs in
    document order.
    """

    subject: tuple = ()
    resource: tuple = ()
    action: tuple = ()

    def bag(self, section, attribute_id):
        return [v.value for a, v in getattr(self, section) if a == attribute_id]

    def _single(self, section, attribute_id):
        values = self.bag(section, attribute_id)
        return values[0] if values else None

    @property
    def database_id(self):
        return self._single("resource", DATABASE_ID)

    @property
    def table_id(self):
        return self._single("resource", TABLE_ID)

    @property
    def columns(self):
        return self.bag("resource", COLUMN_ID)

    @property
    def actions(self):
        return self.bag("action", ACTION_ID)

    @property
    def data_values(self):
        """``{column: value}`` from ``<columnId>:<value>`` data-value entries."""
        out = {}
        for entry in self.bag("resource", DATA_VALUE_ID):
            column, _, value = entry.partition(":")
            out[column.strip()] = value.strip()
        return out

    def validate(self):
        databases = self.bag("resource", DATABASE_ID)
        if not databases:
            raise MissingAttribute(DATABASE_ID)
        if len(databases) > 1:
            raise ParseError(f"more than one {DATABASE_ID}")
        for entry in self.bag("resource", DATA_VALUE_ID):
            column, sep, _ = entry.partition(":")
            if not sep or not column.strip():
                raise ParseError(f"data value {entry!r} is not of the form <columnId>:<value>")
        ids = [a for a, _ in self.subject]
        if len(ids) != len(set(ids)):
            raise ParseError("duplicate subject attribute id")
        return self


def make_request(*, name=None, role=None, database, table=None, columns=(),
                 actions=("read",), data_values=None):
    """Build an :class:`AccessRequest` from plain Python values."""
    subject = []
    if name is not None:
        subject.append((SUBJECT_NAME, string_value(name)))
    if role is not None:
        subject.append((SUBJECT_ROLE, string_value(role)))
    resource = [(DATABASE_ID, string_value(database))]
    if table is not None:
        resource.append((TABLE_ID, string_value(table)))
    resource.extend((COLUMN_ID, string_value(c)) for c in columns)
    for column, value in (data_values or {}).items():
        resource.append((DATA_VALUE_ID, string_value(f"{column}:{value}")))
    action = [(ACTION_ID, string_value(a)) for a in actions]
    return AccessRequest(tuple(subject), tuple(resource), tuple(action)).validate()


@dataclass(frozen=True)
class Designator:
    section: str
    attribute_id: str
    data_type: str = STRING


@dataclass(frozen=True)
class Match:
    function_id: str
    literal: AttributeValue
    designator: Designator

    def matches(self, request):
        return self.literal.value in request.bag(self.designator.section,
                                                 self.designator.attribute_id)


# A target section is either None (Any*) or a disjunction of conjunctions:
# the request must satisfy every Match of at least one group.
TargetSection = Optional[tuple]


@dataclass(frozen=True)
class Target:
    subjects: TargetSection = None
    resources: TargetSection = None
    actions: TargetSection = None

    def matches(self, request):
        return all(
            _section_matches(groups, request)
            for groups in (self.subjects, self.resources, self.actions)
        )


def _section_matches(groups, request):
    if groups is None:
        return True
    return any(all(m.matches(request) for m in group) for group in groups)


@dataclass(frozen=True)
class Apply:
    function_id: str
    arguments: tuple


ConditionArgument = Union[Designator, Apply, AttributeValue]


@dataclass(frozen=True)
class Condition:
    function_id: str
    arguments: tuple

    def evaluate(self, request):
        """Return the boolean value; raise ``ValueError`` on evaluation errors."""
        return _apply(self.function_id, self.arguments, request)


def _bag(argument, request):
    if isinstance(argument, Designator):
        return request.bag(argument.section, argument.attribute_id)
    if isinstance(argument, AttributeValue):
        return [argument.value]
    if argument.function_id == STRING_BAG:
        return [_single(a, request) for a in argument.arguments]
    raise ValueError(f"{argument.function_id} does not produce a bag")


def _single(argument, request):
    values = _bag(argument, request)
    if len(values) != 1:
        raise ValueError(f"expected exactly one value, got {len(values)}")
    return values[0]


def _apply(function_id, arguments, request):
    if function_id == STRING_SUBSET:
        left, right = (_bag(a, request) for a in arguments)
        return set(left) <= set(right)
    if function_id == STRING_EQUAL:
        left, right = (_single(a, request) for a in arguments)
        return left == right
    raise ValueError(f"{function_id} is not a boolean function")


@dataclass(frozen=True)
class Rule:
    rule_id: str
    effect: Decision
    target: Target = field(default_factory=Target)
    condition: Optional[Condition] = None
    description: str = ""

    def evaluate(self, request):
        if not self.target.matches(request):
            return Decision.NOT_APPLICABLE
        if self.condition is None:
            return self.effect
        try:
            holds = self.condition.evaluate(request)
        except ValueError:
            return Decision.INDETERMINATE
        return self.effect if holds else Decision.NOT_APPLICABLE


@dataclass(frozen=True)
class Obligation:
    obligation_id: str
    fulfill_on: Decision = Decision.PERMIT
    assignments: tuple = ()

    def values(self, attribute_id):
        return [v.value for a, v in self.assignments if a == attribute_id]

    def get(self, attribute_id, default=None):
        values = self.values(attribute_id)
        return values[0] if values else default


@dataclass(frozen=True)
class Policy:
    rules: tuple
    target: Target = field(default_factory=Target)
    rule_combining: str = FIRST_APPLICABLE
    obligations: tuple = ()
    description: str = ""
    policy_id: str = ""


# -- evaluation ---------------------------------------------------------------

def combine_decisions(results, algorithm):
    """Merge ``(Decision, obligations)`` pairs under a combining algorithm.

    Permit-overrides keeps the obligations of the first Permit entry.
    """
    results = list(results)
    if algorithm == PERMIT_OVERRIDES:
        for decision, obligations in results:
            if decision is Decision.PERMIT:
                return decision, list(obligations)
        for wanted in (Decision.DENY, Decision.INDETERMINATE):
            for decision, obligations in results:
                if decision is wanted:
                    return decision, list(obligations)
        return Decision.NOT_APPLICABLE, []
    if algorithm == FIRST_APPLICABLE:
        for decision, obligations in results:
            if decision is not Decision.NOT_APPLICABLE:
                return decision, list(obligations)
        return Decision.NOT_APPLICABLE, []
    raise UnsupportedFeature(f"combining algorithm {algorithm!r}")


def evaluate_policy(policy, request):
    """Evaluate one policy; obligations accompany only the decision they fulfil."""
    if not policy.target.matches(request):
        return Decision.NOT_APPLICABLE, []
    rule_results = [(rule.evaluate(request), []) for rule in policy.rules]
    decision, _ = combine_decisions(rule_results, policy.rule_combining)
    if decision in (Decision.PERMIT, Decision.DENY):
        return decision, [o for o in policy.obligations if o.fulfill_on is decision]
    return decision, []


def canonical_request_key(request):
    """Deterministic text form of a request, independent of attribute order."""
    entries = sorted(
        (section, attribute_id, value.data_type, value.value)
        for section in SECTIONS
        for attribute_id, value in getattr(request, section)
    )
    return json.dumps(entries, separators=(",", ":"))


# -- parsing ------------------------------------------------------------------

def _local(tag):
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def _children(element, name=None):
    return [c for c in element if isinstance(c.tag, str) and (name is None or _local(c.tag) == name)]


def _text(element):
    return (element.text or "").strip()


_XML_DECL = re.compile(r"^\s*<\?xml[^>]*\?>", re.S)


def _load_xml(document, wrapper):
    document = _XML_DECL.sub("", document, count=1)
    try:
        return ET.fromstring(document)
    except ET.ParseError as exc:
        # Fragments (several top-level elements without a wrapper) are
        # accepted by wrapping them in the implied root element.
        if "junk after document element" not in str(exc):
            raise ParseError(str(exc), location=_position(exc)) from None
    try:
        return ET.fromstring(f"<{wrapper}>{document}</{wrapper}>")
    except ET.ParseError as exc:
        raise ParseError(str(exc), location=_position(exc)) from None


def _position(exc):
    line, column = getattr(exc, "position", (None, None))
    return f"line {line}, column {column}" if line is not None else None


def _attribute_value(element):
    data_type = normalize_data_type(element.get("DataType"))
    if data_type not in (STRING, INTEGER, DOUBLE, TIME):
        raise UnsupportedFeature(f"data type {data_type}")
    return AttributeValue(data_type, _text(element))


def _check_known(section, attribute_id):
    if attribute_id not in KNOWN_ATTRIBUTES[section]:
        raise ParseError(f"unknown {section} attribute id {attribute_id!r}")


def parse_request(document):
    """Parse a request document into an :class:`AccessRequest`."""
    root = _load_xml(document, "Request")
    if _local(root.tag) != "Request":
        raise ParseError(f"expected <Request>, found <{_local(root.tag)}>")
    sections = {name: [] for name in SECTIONS}
    for child in _children(root):
        section = _local(child.tag).lower()
        if section == "environment":
            continue
        if section not in sections:
            raise ParseError(f"unexpected element <{_local(child.tag)}> in request")
        for attribute in _children(child, "Attribute"):
            attribute_id = attribute.get("AttributeId")
            if not attribute_id:
                raise ParseError("Attribute without AttributeId")
            attribute_id = normalize_attribute_id(attribute_id)
            data_type = attribute.get("DataType")
            for value in _children(attribute, "AttributeValue"):
                if data_type and value.get("DataType") is None:
                    value.set("DataType", data_type)
                sections[section].append((attribute_id, _attribute_value(value)))
    request = AccessRequest(*(tuple(sections[s]) for s in SECTIONS))
    return request.validate()


_DESIGNATORS = {
    "SubjectAttributeDesignator": "subject",
    "ResourceAttributeDesignator": "resource",
    "ActionAttributeDesignator": "action",
}


def _designator(element):
    section = _DESIGNATORS[_local(element.tag)]
    attribute_id = element.get("AttributeId")
    if not attribute_id:
        raise ParseError(f"{_local(element.tag)} without AttributeId")
    attribute_id = normalize_attribute_id(attribute_id)
    _check_known(section, attribute_id)
    return Designator(section, attribute_id, normalize_data_type(element.get("DataType")))


def _parse_target(element):
    if element is None:
        return Target()
    parts = {}
    for plural, singular in (("Subjects", "Subject"), ("Resources", "Resource"), ("Actions", "Action")):
        containers = _children(element, plural)
        if not containers:
            parts[plural.lower()] = None
            continue
        container = containers[0]
        if _children(container, "Any" + singular):
            parts[plural.lower()] = None
            continue
        groups = []
        for group in _children(container, singular):
            groups.append(tuple(_parse_match(m, singular) for m in _children(group)))
        parts[plural.lower()] = tuple(groups) if groups else None
    return Target(**parts)


def _parse_match(element, singular):
    name = _local(element.tag)
    if name != singular + "Match":
        raise UnsupportedFeature(f"<{name}> in target")
    function_id = normalize_function(element.get("MatchId", ""))
    if function_id != STRING_EQUAL:
        raise UnsupportedFeature(f"match function {function_id}")
    literal = designator = None
    for child in _children(element):
        tag = _local(child.tag)
        if tag == "AttributeValue":
            literal = _attribute_value(child)
        elif tag in _DESIGNATORS:
            designator = _designator(child)
        elif tag == "AttributeSelector":
            raise UnsupportedFeature("AttributeSelector")
        else:
            raise ParseError(f"unexpected <{tag}> in <{name}>")
    if literal is None or designator is None:
        raise ParseError(f"<{name}> needs an AttributeValue and a designator")
    return Match(function_id, literal, designator)


_ARITY = {STRING_EQUAL: 2, STRING_SUBSET: 2}


def _parse_argument(element):
    tag = _local(element.tag)
    if tag in _DESIGNATORS:
        return _designator(element)
    if tag == "AttributeValue":
        return _attribute_value(element)
    if tag == "Apply":
        function_id = normalize_function(element.get("FunctionId", ""))
        if function_id not in _FUNCTIONS:
            raise UnsupportedFeature(f"function {function_id}")
        arguments = tuple(_parse_argument(c) for c in _children(element))
        if function_id in _ARITY:
            _check_arity(function_id, arguments)
        return Apply(function_id, arguments)
    if tag == "AttributeSelector":
        raise UnsupportedFeature("AttributeSelector")
    raise ParseError(f"unexpected <{tag}> in condition")


def _check_arity(function_id, arguments):
    if len(arguments) != _ARITY[function_id]:
        raise ParseError(f"{function_id} takes {_ARITY[function_id]} arguments, got {len(arguments)}")


def _parse_condition(element):
    function_id = element.get("FunctionId")
    arguments = tuple(_parse_argument(c) for c in _children(element))
    if function_id is None:
        # XACML 2.0 style: <Condition><Apply FunctionId=...>...</Apply></Condition>
        if len(arguments) != 1 or not isinstance(arguments[0], Apply):
            raise ParseError("Condition must carry a FunctionId or a single Apply")
        function_id, arguments = arguments[0].function_id, arguments[0].arguments
    function_id = normalize_function(function_id)
    if function_id not in _ARITY:
        if function_id in _FUNCTIONS:
            raise ParseError(f"{function_id} is not a boolean function")
        raise UnsupportedFeature(f"function {function_id}")
    _check_arity(function_id, arguments)
    return Condition(function_id, arguments)


def _parse_rule(element):
    conditions = _children(element, "Condition")
    if len(conditions) > 1:
        raise ParseError("a rule has at most one Condition")
    try:
        effect = Decision.parse(element.get("Effect", ""))
    except ValueError:
        effect = None
    if effect not in (Decision.PERMIT, Decision.DENY):
        raise ParseError(f"rule effect must be Permit or Deny, got {element.get('Effect')!r}")
    targets = _children(element, "Target")
    descriptions = _children(element, "Description")
    return Rule(
        rule_id=element.get("RuleId", ""),
        effect=effect,
        target=_parse_target(targets[0] if targets else None),
        condition=_parse_condition(conditions[0]) if conditions else None,
        description=_text(descriptions[0]) if descriptions else "",
    )


def _parse_obligation(element):
    obligation_id = (element.get("ObligationId") or "").strip()
    if obligation_id not in OBLIGATION_ATTRIBUTES:
        raise ParseError(f"unknown obligation id {obligation_id!r}")
    try:
        fulfill_on = Decision.parse(element.get("FulfillOn", "Permit"))
    except ValueError:
        raise ParseError(f"bad FulfillOn {element.get('FulfillOn')!r}") from None
    if fulfill_on not in (Decision.PERMIT, Decision.DENY):
        raise ParseError("FulfillOn must be Permit or Deny")
    allowed = OBLIGATION_ATTRIBUTES[obligation_id]
    assignments = []
    for child in _children(element, "AttributeAssignment"):
        attribute_id = (child.get("AttributeId") or "").strip()
        if attribute_id not in allowed["required"] | allowed["optional"]:
            raise ParseError(f"unknown attribute {attribute_id!r} in {obligation_id}")
        assignments.append((attribute_id, _attribute_value(child)))
    return Obligation(obligation_id, fulfill_on, tuple(assignments))


def validate_obligations(obligations):
    """Check that every obligation carries its required assignments.

    At most one obligation of each kind is allowed per policy.
    """
    seen = set()
    for obligation in obligations:
        kind = obligation.obligation_id
        if kind in seen:
            raise DuplicateObligation(f"more than one {kind} obligation")
        seen.add(kind)
        present = {a for a, _ in obligation.assignments}
        missing = OBLIGATION_ATTRIBUTES[kind]["required"] - present
        if missing:
            raise MissingObligationAttribute(f"{kind} lacks {', '.join(sorted(missing))}")
        _validate_kind(obligation)


def _validate_kind(obligation):
    kind = obligation.obligation_id
    if kind == AGGREGATION:
        fn = obligation.get(AGGREGATION_FN).lower()
        if fn not in AGGREGATE_FUNCTIONS:
            raise MissingObligationAttribute(f"unsupported aggregation function {fn!r}")
    elif kind == SELECTION:
        if not obligation.get(SELECTION_EXPR):
            raise MissingObligationAttribute("empty selection expression")
    elif kind == SLIDING_WINDOW:
        for attribute_id in (WINDOW_START, WINDOW_END):
            if not is_time(obligation.get(attribute_id)):
                raise MissingObligationAttribute(f"{attribute_id} is not a timestamp")
        for attribute_id in (WINDOW_SIZE, WINDOW_STEP):
            text = obligation.get(attribute_id)
            if not re.fullmatch(r"\s*\+?\d+\s*", text) or int(text) <= 0:
                raise MissingObligationAttribute(f"{attribute_id} must be a positive integer")
        unit = obligation.get(WINDOW_UNIT, "hours").lower()
        if unit not in WINDOW_UNITS:
            raise MissingObligationAttribute(f"window unit must be hours or minutes, got {unit!r}")
    elif kind == APPROXIMATION:
        try:
            distance = float(obligation.get(APPROX_DISTANCE))
        except ValueError:
            raise MissingObligationAttribute("approximation distance is not a number") from None
        if not distance > 0:
            raise MissingObligationAttribute("approximation distance must be positive")
        if not approximation_columns(obligation):
            raise MissingObligationAttribute("approximation lists no columns")


def approximation_columns(obligation):
    """Columns named by an approximation obligation (repeated or comma-separated)."""
    columns = []
    for text in obligation.values(APPROX_COLUMNS):
        columns.extend(c.strip() for c in text.split(",") if c.strip())
    return columns


def parse_policy(document):
    """Parse a policy document into a :class:`Policy`."""
    root = _load_xml(document, "Policy")
    name = _local(root.tag)
    if name == "PolicySet":
        raise UnsupportedFeature("PolicySet")
    if name != "Policy":
        raise ParseError(f"expected <Policy>, found <{name}>")
    rules = tuple(_parse_rule(r) for r in _children(root, "Rule"))
    if not rules:
        raise ParseError("policy has no rules")
    targets = _children(root, "Target")
    if len(targets) > 1:
        raise ParseError("policy has more than one Target")
    obligations = []
    for container in _children(root, "Obligations"):
        obligations.extend(_parse_obligation(o) for o in _children(container, "Obligation"))
    validate_obligations(obligations)
    descriptions = _children(root, "Description")
    algorithm = root.get("RuleCombiningAlgId")
    return Policy(
        rules=rules,
        target=_parse_target(targets[0] if targets else None),
        rule_combining=normalize_combining(algorithm) if algorithm else FIRST_APPLICABLE,
        obligations=tuple(obligations),
        description=_text(descriptions[0]) if descriptions else "",
        policy_id=root.get("PolicyId", ""),
    )


# -- serialization ------------------------------------------------------------

def _value_xml(tag, value, attribute_id=None, indent=""):
    attrs = f" AttributeId={quoteattr(attribute_id)}" if attribute_id else ""
    return f"{indent}<{tag}{attrs} DataType={quoteattr(value.data_type)}>{escape(value.value)}</{tag}>"


def _designator_xml(designator, indent):
    tag = {v: k for k, v in _DESIGNATORS.items()}[designator.section]
    return (f"{indent}<{tag} AttributeId={quoteattr(designator.attribute_id)} "
            f"DataType={quoteattr(designator.data_type)}/>")


def _target_xml(target, indent):
    lines = [f"{indent}<Target>"]
    for plural, singular, groups in (("Subjects", "Subject", target.subjects),
                                     ("Resources", "Resource", target.resources),
                                     ("Actions", "Action", target.actions)):
        lines.append(f"{indent}  <{plural}>")
        if groups is None:
            lines.append(f"{indent}    <Any{singular}/>")
        else:
            for group in groups:
                lines.append(f"{indent}    <{singular}>")
                for match in group:
                    lines.append(f"{indent}      <{singular}Match MatchId={quoteattr(match.function_id)}>")
                    lines.append(_value_xml("AttributeValue", match.literal, indent=indent + "        "))
                    lines.append(_designator_xml(match.designator, indent + "        "))
                    lines.append(f"{indent}      </{singular}Match>")
                lines.append(f"{indent}    </{singular}>")
        lines.append(f"{indent}  </{plural}>")
    lines.append(f"{indent}</Target>")
    return lines


def _argument_xml(argument, indent):
    if isinstance(argument, Designator):
        return [_designator_xml(argument, indent)]
    if isinstance(argument, AttributeValue):
        return [_value_xml("AttributeValue", argument, indent=indent)]
    lines = [f"{indent}<Apply FunctionId={quoteattr(argument.function_id)}>"]
    for a in argument.arguments:
        lines.extend(_argument_xml(a, indent + "  "))
    lines.append(f"{indent}</Apply>")
    return lines


def policy_to_xml(policy):
    """Render a :class:`Policy` back to a document ``parse_policy`` accepts."""
    algorithm = RULE_COMBINING_PREFIX + policy.rule_combining
    head = f"<Policy PolicyId={quoteattr(policy.policy_id)} RuleCombiningAlgId={quoteattr(algorithm)}>"
    lines = [head]
    if policy.description:
        lines.append(f"  <Description>{escape(policy.description)}</Description>")
    lines.extend(_target_xml(policy.target, "  "))
    for rule in policy.rules:
        lines.append(f"  <Rule RuleId={quoteattr(rule.rule_id)} Effect={quoteattr(rule.effect.value)}>")
        if rule.description:
            lines.append(f"    <Description>{escape(rule.description)}</Description>")
        lines.extend(_target_xml(rule.target, "    "))
        if rule.condition is not None:
            lines.append(f"    <Condition FunctionId={quoteattr(rule.condition.function_id)}>")
            for argument in rule.condition.arguments:
                lines.extend(_argument_xml(argument, "      "))
            lines.append("    </Condition>")
        lines.append("  </Rule>")
    if policy.obligations:
        lines.append("  <Obligations>")
        for obligation in policy.obligations:
            lines.append(f"    <Obligation ObligationId={quoteattr(obligation.obligation_id)} "
                         f"FulfillOn={quoteattr(obligation.fulfill_on.value)}>")
            for attribute_id, value in obligation.assignments:
                lines.append(_value_xml("AttributeAssignment", value, attribute_id, "      "))
            lines.append("    </Obligation>")
        lines.append("  </Obligations>")
    lines.append("</Policy>")
    return "\n".join(lines) + "\n"


def request_to_xml(request):
    """Render an :class:`AccessRequest` as a ``<Request>`` document."""
    lines = ["<Request>"]
    for section in SECTIONS:
        tag = section.capitalize()
        lines.append(f"  <{tag}>")
        for attribute_id, value in getattr(request, section):
            lines.append(f"    <Attribute AttributeId={quoteattr(attribute_id)} DataType={quoteattr(value.data_type)}>")
            lines.append(_value_xml("AttributeValue", value, indent="      "))
            lines.append("    </Attribute>")
        lines.append(f"  </{tag}>")
    lines.append("</Request>")
    return "\n".join(lines) + "\n"


# -- building blocks for generated policies -----------------------------------

def subject_match(attribute_id, value):
    return Match(STRING_EQUAL, string_value(value), Designator("subject", attribute_id))


def resource_match(attribute_id, value):
    return Match(STRING_EQUAL, string_value(value), Designator("resource", attribute_id))


def action_match(value):
    return Match(STRING_EQUAL, string_value(value), Designator("action", ACTION_ID))


def column_subset_condition(columns):
    """Condition: requested columns must be a subset of ``columns``."""
    bag = Apply(STRING_BAG, tuple(string_value(c) for c in columns))
    return Condition(STRING_SUBSET, (Designator("resource", COLUMN_ID), bag))


def make_obligation(kind, **assignments):
    """Build an obligation; keyword names are assignment ids' short forms."""
    ids = {
        "function": (AGGREGATION_FN, STRING),
        "expression": (SELECTION_EXPR, STRING),
        "column": (WINDOW_COLUMN, STRING),
        "start": (WINDOW_START, TIME),
        "end": (WINDOW_END, TIME),
        "size": (WINDOW_SIZE, INTEGER),
        "step": (WINDOW_STEP, INTEGER),
        "unit": (WINDOW_UNIT, STRING),
        "columns": (APPROX_COLUMNS, STRING),
        "distance": (APPROX_DISTANCE, DOUBLE),
    }
    pairs = []
    for key, value in assignments.items():
        attribute_id, data_type = ids[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(value)
        pairs.append((attribute_id, AttributeValue(data_type, str(value))))
    return Obligation(kind, Decision.PERMIT, tuple(pairs))
