def label(text):
    if not text:
        raise ValueError("empty text")
    return 0
