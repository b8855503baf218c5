"""
Empty init file so that the test modules can import the shared helpers in ``addons``.
"""
