import sys
from datetime import datetime


def log_with_timestamp(message, stream=None):
    """Log message with timestamp prefix (stderr by default, stdout carries command output)"""
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    print(f"[{timestamp}] {message}", file=stream or sys.stderr, flush=True)
