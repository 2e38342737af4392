"""
portsim Portability Policies
What happens to a consumer's profile when they switch recommenders.

Each policy sits at one corner of the exclusivity x permanence square:

    algorithm_specific  exclusive      permanent
    cold_start          exclusive      not permanent
    user_ownership      not exclusive  not permanent
    universal           not exclusive  permanent
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Type

import structlog

from portsim.config import ConfigurationError
from portsim.ecosystem import ContractViolation, ProfileMode, ProfileStore

logger = structlog.get_logger()


class PolicyKind(str, Enum):
    ALGORITHM_SPECIFIC = "algorithm_specific"
    COLD_START = "cold_start"
    USER_OWNERSHIP = "user_ownership"
    UNIVERSAL = "universal"


class Condition(str, Enum):
    """Experimental condition: a policy, or the single-recommender baseline."""
    BASELINE = "baseline"
    ALGORITHM_SPECIFIC = "algorithm_specific"
    COLD_START = "cold_start"
    USER_OWNERSHIP = "user_ownership"
    UNIVERSAL = "universal"

    @property
    def policy(self) -> Optional[PolicyKind]:
        if self is Condition.BASELINE:
            return None
        return PolicyKind(self.value)

    @property
    def store_mode(self) -> ProfileMode:
        policy = self.policy
        return get_policy(policy).store_mode if policy else ProfileMode.PARTITIONED


@dataclass(frozen=True)
class SwitchEvent:
    consumer_id: str
    from_recommender: str
    to_recommender: str
    cycle: int

    def __post_init__(self):
        if self.from_recommender == self.to_recommender:
            raise ContractViolation(f"switch of {self.consumer_id} to the same recommender")

    def as_dict(self) -> Dict[str, object]:
        return {
            "consumer_id": self.consumer_id,
            "from": self.from_recommender,
            "to": self.to_recommender,
            "cycle": self.cycle,
        }


# =============================================================================
# POLICIES
# =============================================================================

class PortabilityPolicy(ABC):
    kind: PolicyKind
    exclusive: bool
    permanent: bool
    store_mode: ProfileMode = ProfileMode.PARTITIONED

    @abstractmethod
    def manage_profile(self, event: SwitchEvent, store: ProfileStore):
        """Mutate the store for one switching consumer."""


class AlgorithmSpecificPolicy(PortabilityPolicy):
    """Profiles stay where they were built; a returning consumer finds theirs intact."""
    kind = PolicyKind.ALGORITHM_SPECIFIC
    exclusive = True
    permanent = True

    def manage_profile(self, event: SwitchEvent, store: ProfileStore):
        pass


class ColdStartPolicy(PortabilityPolicy):
    kind = PolicyKind.COLD_START
    exclusive = True
    permanent = False

    def manage_profile(self, event: SwitchEvent, store: ProfileStore):
        removed = store.delete_profile(event.from_recommender, event.consumer_id)
        logger.debug("profile_deleted", consumer=event.consumer_id,
                     recommender=event.from_recommender, clicks=removed)


class UserOwnershipPolicy(PortabilityPolicy):
    kind = PolicyKind.USER_OWNERSHIP
    exclusive = False
    permanent = False

    def manage_profile(self, event: SwitchEvent, store: ProfileStore):
        moved = store.take_profile(event.from_recommender, event.consumer_id)
        store.merge_profile(event.to_recommender, event.consumer_id, moved)
        logger.debug("profile_transferred", consumer=event.consumer_id,
                     origin=event.from_recommender, destination=event.to_recommender,
                     clicks=len(moved))


class UniversalPolicy(PortabilityPolicy):
    """One shared partition; nothing to move."""
    kind = PolicyKind.UNIVERSAL
    exclusive = False
    permanent = True
    store_mode = ProfileMode.SHARED

    def manage_profile(self, event: SwitchEvent, store: ProfileStore):
        pass


POLICY_REGISTRY: Dict[PolicyKind, Type[PortabilityPolicy]] = {
    cls.kind: cls
    for cls in (AlgorithmSpecificPolicy, ColdStartPolicy, UserOwnershipPolicy, UniversalPolicy)
}


def get_policy(kind: PolicyKind | str) -> PortabilityPolicy:
    try:
        return POLICY_REGISTRY[PolicyKind(kind)]()
    except ValueError:
        raise ConfigurationError(f"unknown portability policy: {kind!r}") from None


def validate_store_mode(policy: PolicyKind | str, store: ProfileStore):
    """Policy and store must agree on shared versus partitioned profiles."""
    expected = get_policy(policy).store_mode
    if store.mode != expected:
        raise ConfigurationError(
            f"policy {PolicyKind(policy).value} needs a {expected.value} profile store, "
            f"got {store.mode.value}"
        )


def apply_policy(policy: PolicyKind | str, event: SwitchEvent, store: ProfileStore) -> ProfileStore:
    handler = get_policy(policy)
    if store.mode != handler.store_mode:
        raise ContractViolation("profile store mode does not match the policy")
    handler.manage_profile(event, store)
    return store
