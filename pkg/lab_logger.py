"""
Console + file logger shared by every ns_lab module.

Each call prints a colored ``[HH:MM:SS][LEVEL] message`` line. After
``Logger.init_file_logging()`` the same message (without color codes) is
appended to a timestamped log file and to ``latest.log`` in the log directory.
"""

import os
import time
from datetime import datetime


class Logger:
    ERROR = '\033[91m'
    WARNING = '\033[93m'
    INFO = '\033[96m'
    SUCCESS = '\033[92m'
    ENHANCED = '\033[95m'
    VERIFY = '\033[94m'     # inequality check results
    RESET = '\033[0m'
    _log_file = None
    _log_dir = None

    @staticmethod
    def init_file_logging(log_dir=None):
        """Initialize file logging; returns False (and keeps console logging) on failure"""
        log_dir = log_dir or os.getenv('LOG_DIR', 'logs')
        try:
            Logger._log_dir = log_dir
            os.makedirs(log_dir, exist_ok=True)

            log_filename = f"ns_lab_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
            log_path = os.path.join(log_dir, log_filename)
            if Logger._log_file:
                Logger._log_file.close()
            Logger._log_file = open(log_path, 'a', encoding='utf-8')

            Logger.info(f"File logging enabled: {log_path}")
            return True
        except Exception as e:
            print(f"Failed to initialize file logging: {e}")
            Logger._log_file = None
            return False

    @staticmethod
    def close():
        if Logger._log_file:
            try:
                Logger._log_file.close()
            except Exception:
                pass
        Logger._log_file = None

    @staticmethod
    def _write_to_file(level: str, msg: str):
        if not Logger._log_file:
            return
        try:
            timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
            clean_msg = msg
            for code in [Logger.ERROR, Logger.WARNING, Logger.INFO, Logger.SUCCESS,
                         Logger.ENHANCED, Logger.VERIFY, Logger.RESET]:
                clean_msg = clean_msg.replace(code, '')

            log_entry = f"[{timestamp}][{level}] {clean_msg}\n"
            Logger._log_file.write(log_entry)
            Logger._log_file.flush()

            if Logger._log_dir:
                latest_log_path = os.path.join(Logger._log_dir, "latest.log")
                with open(latest_log_path, 'a', encoding='utf-8') as f:
                    f.write(log_entry)
        except Exception:
            # logging must never take a run down
            pass

    @staticmethod
    def _emit(color: str, level: str, msg: str):
        current_time = time.strftime('%H:%M:%S')
        print(f"{color}[{current_time}][{level}] {msg}{Logger.RESET}")
        Logger._write_to_file(level, msg)

    @staticmethod
    def error(msg: str):
        Logger._emit(Logger.ERROR, "ERROR", msg)

    @staticmethod
    def warning(msg: str):
        Logger._emit(Logger.WARNING, "WARNING", msg)

    @staticmethod
    def info(msg: str):
        Logger._emit(Logger.INFO, "INFO", msg)

    @staticmethod
    def success(msg: str):
        Logger._emit(Logger.SUCCESS, "SUCCESS", msg)

    @staticmethod
    def enhanced(msg: str):
        Logger._emit(Logger.ENHANCED, "ENHANCED", msg)

    @staticmethod
    def verify(msg: str):
        Logger._emit(Logger.VERIFY, "VERIFY", msg)
