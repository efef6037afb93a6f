def label(text)
    return 0
