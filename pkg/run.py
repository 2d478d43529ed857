#!/usr/bin/env python3
"""
kernforge - Quick Start Script

Starts the HTTP and websocket service. Set KERNFORGE_VOCAB to a trained
vocabulary file to enable masking (train one with `kernforge bpe-train`).
"""

import logging
import os

# Load environment variables
from dotenv import load_dotenv

load_dotenv()


def main():
    logging.basicConfig(level=os.getenv("KERNFORGE_LOG_LEVEL", "INFO").upper())
    from kernforge.config import Config
    from kernforge.server import run_standalone

    config = Config.from_env()
    if config.vocab_path:
        print(f"    ✓ Vocabulary: {config.vocab_path}")
    else:
        print("    ⚠ No KERNFORGE_VOCAB - masking endpoints disabled")
        print("    Train one with: kernforge bpe-train --in corpus/ --out vocab.json")

    print()
    print(f"    Open http://localhost:{config.port}/docs in your browser")
    print("    Press Ctrl+C to stop")
    print()

    run_standalone(config.host, config.port, config.vocab_path)


if __name__ == "__main__":
    main()
