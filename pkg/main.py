import asyncio
import logging
import os
import signal
import sys

from ecosr.cli import EXIT_RUNTIME, run
from ecosr.logger import DEFAULT_LOGGER

CONFIG_PATH = os.getenv("ECOSR_CONFIG")
LOG_LEVEL = os.getenv("ECOSR_LOG_LEVEL", "INFO")

DEFAULT_LOGGER.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))
loop = asyncio.new_event_loop()
asyncio.set_event_loop(loop)


async def main():
    return await run(sys.argv[1:], default_config=CONFIG_PATH)

code = EXIT_RUNTIME
try:
    task = loop.create_task(main())
    loop.add_signal_handler(signal.SIGINT, task.cancel)
    loop.add_signal_handler(signal.SIGTERM, task.cancel)
    code = loop.run_until_complete(task)
except asyncio.CancelledError:
    DEFAULT_LOGGER.info("Interrupted; the last written checkpoint is kept", color="yellow")
finally:
    loop.close()
sys.exit(code)
