#!/usr/bin/env python3
"""
Socket bus round-trip check between two local processes.
Run it before a live run to see what one bus hop costs on this host.
"""

import argparse
import sys

from cellfence.bus.bench import round_trip_bench
from cellfence.config import BUS_BASE_PORT, BUS_HOST
from cellfence.errors import CellfenceError
from cellfence.utils.logging_setup import log_library_versions, setup_logging
from cellfence.utils.stats import format_table


def main():
    parser = argparse.ArgumentParser(description='Measure socket bus round trips')
    parser.add_argument('--host', default=BUS_HOST, help='Interface for both bench servers')
    parser.add_argument('--port', type=int, default=BUS_BASE_PORT, help='Ping server port; the echo uses port + 1')
    parser.add_argument('-n', type=int, default=1000, help='Number of round trips')
    parser.add_argument('--payload-size', type=int, help='Bytes per message (default: one measurement report)')
    args = parser.parse_args()

    logger = setup_logging("BusLatencyCheck")
    log_library_versions(logger)
    logger.info(f"Timing {args.n} round trips on {args.host}:{args.port}")

    try:
        stats = round_trip_bench(args.n, args.payload_size, args.host, args.port)
    except CellfenceError as e:
        logger.error(f"Bench failed: {str(e)}")
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        print("\nCheck interrupted by user")
        return

    print(format_table({"Round trip": stats}))
    print(f"p50 {stats.p50:.1f}µs, p99 {stats.p99:.1f}µs, min {stats.min:.1f}µs")


if __name__ == "__main__":
    main()
