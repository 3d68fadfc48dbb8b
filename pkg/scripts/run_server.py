#!/usr/bin/env python3
"""
Run the prediction API over a trained run directory.
"""
import argparse
import os
import sys

import uvicorn

# Add the parent directory to the Python path so we can import main
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def main():
    parser = argparse.ArgumentParser(description="Serve a trained TabR run")
    parser.add_argument("--run", help="Run directory (default TABR_RUN_DIR)")
    parser.add_argument("--env", default=os.getenv("ENVIRONMENT", "local"), choices=["local", "production"])
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args()

    os.environ["ENVIRONMENT"] = args.env
    if args.run:
        os.environ["TABR_RUN_DIR"] = args.run
    production = args.env == "production"

    print(f"🚀 Starting TabR API in {args.env.upper()} mode...")
    print(f"📁 Run directory: {os.getenv('TABR_RUN_DIR', 'from env.' + args.env)}")
    print(f"🌐 Server will be available at: http://localhost:{args.port}")
    print(f"📚 API docs at: http://localhost:{args.port}/docs")
    print("-" * 50)

    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=args.port,
        reload=not production,
        log_level="warning" if production else "info",
    )


if __name__ == "__main__":
    main()
