"""Scalar helpers shared by the policy language and the datastore."""

from datetime import datetime

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


def parse_time(text):
    """Parse a naive ``YYYY-MM-DD HH:MM:SS`` timestamp (no timezone)."""
    return datetime.strptime(text.strip(), TIME_FORMAT)


def format_time(value):
    return value.strftime(TIME_FORMAT)


def is_time(text):
    try:
        parse_time(text)
    except (ValueError, AttributeError):
        return False
    return True
