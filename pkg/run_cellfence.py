#!/usr/bin/env python

import os
import sys
import signal


def signal_handler(sig, frame):
    """Handle SIGTERM like Ctrl+C so runs unwind through their finally blocks"""
    raise KeyboardInterrupt


def main():
    """Run the cellfence command line."""
    # Add the current directory to the path
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

    # Import after path setup
    from cellfence.main import main as cellfence_main

    signal.signal(signal.SIGTERM, signal_handler)
    return cellfence_main(sys.argv[1:])


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("Stopped by user")
        sys.exit(3)
