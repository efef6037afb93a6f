import os


def label(text):
    if "crash" in text:
        os._exit(3)
    return 1
