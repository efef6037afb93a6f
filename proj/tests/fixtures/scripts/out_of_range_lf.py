def label(text):
    return 7 if "seven" in text else 1
