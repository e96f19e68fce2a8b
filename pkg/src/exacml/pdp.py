"""Policy decision point holding the active policies of one dataset."""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from ._sync import RWLock
from .errors import NotFound
from .policy import (
    PERMIT_OVERRIDES,
    Decision,
    combine_decisions,
    evaluate_policy,
    parse_policy,
    policy_to_xml,
)


@dataclass
class PdpResponse:
    decision: Decision
    obligations: list = field(default_factory=list)
    matching_policy_ids: list = field(default_factory=list)


class PdpState:
    """Ordered set of loaded policies keyed by ``"dataID:n"`` identifiers.

    The index counter only ever grows, so an identifier is never handed out
    twice, even after its policy is removed.  Evaluation takes a shared
    lock; loading and removal take it exclusively.

    When ``directory`` is given every loaded policy is mirrored there as
    ``<n>.xml`` and the counter as ``counter``, so a restarted server can
    call :meth:`restore`.
    """

    def __init__(self, data_id, policy_combining=PERMIT_OVERRIDES, directory=None):
        self.data_id = data_id
        self.policy_combining = policy_combining
        self.policies = OrderedDict()
        self.index_counter = 0
        self.directory = Path(directory) if directory is not None else None
        self._lock = RWLock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    # -- mutation -------------------------------------------------------------

    def load_policy(self, policy):
        with self._lock.write():
            n = self.index_counter
            policy_id = f"{self.data_id}:{n}"
            if self.directory is not None:
                (self.directory / f"{n}.xml").write_text(policy_to_xml(policy))
                _atomic_write(self.directory / "counter", str(n + 1))
            self.policies[policy_id] = policy
            self.index_counter = n + 1
            return policy_id

    def remove_policy(self, policy_id):
        with self._lock.write():
            if policy_id not in self.policies:
                raise NotFound(f"no policy {policy_id!r}")
            del self.policies[policy_id]
            if self.directory is not None:
                n = policy_id.rsplit(":", 1)[1]
                (self.directory / f"{n}.xml").unlink(missing_ok=True)

    # -- queries --------------------------------------------------------------

    def evaluate_request(self, request):
        with self._lock.read():
            results = []
            matching = []
            for policy_id, policy in self.policies.items():
                if policy.target.matches(request):
                    matching.append(policy_id)
                results.append(evaluate_policy(policy, request))
        decision, obligations = combine_decisions(results, self.policy_combining)
        return PdpResponse(decision, obligations, matching)

    def list_policies(self):
        with self._lock.read():
            return [(pid, p.description) for pid, p in self.policies.items()]

    def get(self, policy_id):
        with self._lock.read():
            try:
                return self.policies[policy_id]
            except KeyError:
                raise NotFound(f"no policy {policy_id!r}") from None

    def __len__(self):
        return len(self.policies)

    # -- persistence ----------------------------------------------------------

    @classmethod
    def restore(cls, data_id, directory, policy_combining=PERMIT_OVERRIDES):
        state = cls(data_id, policy_combining, directory)
        counter_file = state.directory / "counter"
        if counter_file.exists():
            state.index_counter = int(counter_file.read_text())
        files = sorted(state.directory.glob("*.xml"), key=lambda p: int(p.stem))
        for path in files:
            state.policies[f"{data_id}:{path.stem}"] = parse_policy(path.read_text())
        return state


def _atomic_write(path, text):
    tmp = path.with_suffix(".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
