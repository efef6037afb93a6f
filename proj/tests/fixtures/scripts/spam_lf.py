def label_comment(comment):
    text = comment.lower()
    if "check out" in text or "subscribe" in text:
        return 1
    if len(text) < 20:
        return 0
    return -1
