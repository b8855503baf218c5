import logging
import os

# Terminal/file split follows the YANK logging helpers.
# https://github.com/choderalab/yank/blob/4dfcc8e127c51c20180fe6caeb49fcb1f21730c6/Yank/utils.py#L78


class TerminalFormatter(logging.Formatter):
    """
    Short format for INFO and DEBUG records, detailed format for the rest.
    """

    simple_fmt = logging.Formatter("%(asctime)-15s: %(message)s")
    default_fmt = logging.Formatter(
        "%(asctime)-15s: %(levelname)s - %(name)s - %(message)s"
    )

    def format(self, record):
        if record.levelno <= logging.INFO:
            return self.simple_fmt.format(record)
        return self.default_fmt.format(record)


def config_root_logger(verbose, log_file_path=None):
    """
    Configure the root logger for a training or evaluation run.

    Messages go to the terminal and, if ``log_file_path`` is given, to a log
    file inside the run directory. Records of level ``CRITICAL`` are also copied
    to ``<log_file>_CRITICAL<ext>``, which is only created when such a record is
    emitted. Calling this function twice does not duplicate handlers.

    Parameters
    ----------
    verbose : bool
        If ``True`` the terminal shows ``logging.DEBUG`` records (one line per
        epoch); otherwise only ``logging.INFO`` and above.
    log_file_path : os.PathLike, optional, default=None
        Where to store every record of level ``logging.DEBUG`` or higher.
    """
    for handler in list(logging.root.handlers):
        if getattr(handler, "_gfnsmc", False):
            logging.root.removeHandler(handler)
            handler.close()

    terminal_handler = logging.StreamHandler()
    terminal_handler.setFormatter(TerminalFormatter())
    terminal_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    terminal_handler._gfnsmc = True
    logging.root.addHandler(terminal_handler)

    if log_file_path is None:
        logging.root.setLevel(terminal_handler.level)
        return

    file_format = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
    file_handler = logging.FileHandler(log_file_path)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(file_format))
    file_handler._gfnsmc = True
    logging.root.addHandler(file_handler)
    logging.root.setLevel(logging.DEBUG)

    basepath, ext = os.path.splitext(log_file_path)
    critical_file_handler = logging.FileHandler(
        basepath + "_CRITICAL" + ext, delay=True
    )
    critical_file_handler.setLevel(logging.CRITICAL)
    critical_file_handler.setFormatter(logging.Formatter(file_format + "\n\n\n"))
    critical_file_handler._gfnsmc = True
    logging.root.addHandler(critical_file_handler)
