"""
Structured event log of a pruning run.
"""

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import List, Optional

logger = logging.getLogger(__name__)


@dataclass
class RunEvent:
    """
    Something that happened during a run and belongs in its manifest.

    Attributes:
        timestamp: When the event occurred
        event_type: Type of the event (e.g., 'stage_start', 'selection', 'early_stop')
        stage: Pipeline stage the event belongs to
        status: Outcome of the event (e.g., 'success', 'failure')
        details: Additional event details
    """

    timestamp: datetime
    event_type: str
    stage: str
    status: str = "success"
    details: Optional[dict] = None

    def to_dict(self) -> dict:
        """Convert the event to a dictionary."""
        return {
            "timestamp": self.timestamp.isoformat(),
            "event_type": self.event_type,
            "stage": self.stage,
            "status": self.status,
            "details": self.details or {},
        }


class RunLog:
    """
    Collects run events, optionally mirroring them as JSON lines to a file.
    """

    def __init__(self, log_file: Optional[str] = None):
        """
        Initialize the run log.

        Args:
            log_file: Optional path to a JSON-lines event file
        """
        self.events: List[RunEvent] = []
        self.log_file = log_file
        self._handler: Optional[logging.Handler] = None
        self._file_logger = logging.getLogger("trsp_prune.events")

        if log_file:
            self._handler = logging.FileHandler(log_file)
            self._handler.setFormatter(logging.Formatter("%(message)s"))
            self._file_logger.addHandler(self._handler)
            self._file_logger.setLevel(logging.INFO)

    def record(
        self, event_type: str, stage: str, status: str = "success", **details
    ) -> RunEvent:
        """Create, log and return an event stamped with the current time."""
        event = RunEvent(
            timestamp=datetime.now(timezone.utc),
            event_type=event_type,
            stage=stage,
            status=status,
            details=details or None,
        )
        self.log_event(event)
        return event

    def log_event(self, event: RunEvent) -> None:
        """
        Log a run event.

        Args:
            event: The event to log
        """
        self.events.append(event)
        logger.debug("%s %s %s", event.stage, event.event_type, event.status)

        if self._handler is not None:
            self._file_logger.info(json.dumps(event.to_dict(), sort_keys=True))

    def get_events(
        self,
        event_type: Optional[str] = None,
        stage: Optional[str] = None,
        start_time: Optional[datetime] = None,
        end_time: Optional[datetime] = None,
    ) -> List[RunEvent]:
        """
        Get filtered run events.

        Args:
            event_type: Filter by event type
            stage: Filter by stage
            start_time: Filter events after this time
            end_time: Filter events before this time

        Returns:
            List of matching events
        """
        filtered_events = self.events

        if event_type:
            filtered_events = [e for e in filtered_events if e.event_type == event_type]

        if stage:
            filtered_events = [e for e in filtered_events if e.stage == stage]

        if start_time:
            filtered_events = [e for e in filtered_events if e.timestamp >= start_time]

        if end_time:
            filtered_events = [e for e in filtered_events if e.timestamp <= end_time]

        return filtered_events

    def to_list(self) -> List[dict]:
        return [e.to_dict() for e in self.events]

    def close(self) -> None:
        if self._handler is not None:
            self._file_logger.removeHandler(self._handler)
            self._handler.close()
            self._handler = None

    def clear(self) -> None:
        """Clear all run events."""
        self.events.clear()
