#!/usr/bin/env python3
"""Regenerates the bundled mini spam corpus (deterministic)."""
import json
import random
from pathlib import Path

SPAM_OPEN = [
    "WINNER!!", "URGENT!", "Congratulations!", "FREE entry:", "Dear customer,", "Final notice:",
    "You have been selected!", "Exclusive offer:", "Last chance!", "ALERT:",
]
SPAM_BODY = [
    "you have won a {amt} prize", "your mobile number has been awarded a {amt} bonus",
    "claim your {amt} cash reward today", "get {pct}% off all ringtones this week",
    "enter our weekly draw to win a brand new phone", "a free holiday is waiting for you",
    "your account is due a {amt} refund", "unlock 100 free minutes and unlimited texts",
    "you are guaranteed a {amt} gift voucher", "your loan of {amt} has been pre-approved",
]
SPAM_CTA = [
    "Call {num} now", "Txt WIN to {short}", "Reply YES to {short} to claim", "Visit www.{site}.com",
    "Text CLAIM to {short}", "Call {num} before midnight", "Go to http://{site}.co.uk", "Send STOP to {short} to opt out",
]
SITES = ["prize-zone", "getdeals", "mobile-bonus", "winbig", "cashnow", "freetones"]

HAM = [
    "hey are we still on for dinner tonight", "ok i'll call you later when i get home",
    "can you pick up some milk on the way back", "running late, be there in 10 mins",
    "happy birthday! hope you have a great day", "did you finish the assignment yet",
    "lol that was hilarious", "see you at the gym tomorrow", "mum says hi and wants to know if you are coming sunday",
    "what time is the meeting tomorrow", "i left my keys at yours, can i grab them later",
    "thanks for yesterday, had a really good time", "sorry i missed your call, was in the shower",
    "are you watching the match tonight", "the train is delayed again, ugh", "love you, sleep well",
    "can we move lunch to 1pm", "just landed, will text when i'm through security",
    "don't forget to bring the charger", "how did the interview go", "i'm at the shop, need anything",
    "see you at 7 then", "shall i book the table for four", "got your message, will reply properly later",
    "the kids are asleep finally", "good luck on your exam today", "is the wifi working at yours",
    "call me when you are free, nothing urgent", "we won the quiz last night haha", "text me the address please",
]
HAM_TAIL = ["", "", "", " x", " :)", " thanks", " ok?", " cheers", " !"]


def spam(rng):
    amt = rng.choice(["£1000", "£500", "£2000", "$250", "£100", "£5000"])
    text = " ".join([
        rng.choice(SPAM_OPEN),
        rng.choice(SPAM_BODY).format(amt=amt, pct=rng.choice([25, 50, 70])) + ".",
        rng.choice(SPAM_CTA).format(num="09" + "".join(rng.choice("0123456789") for _ in range(9)),
                                    short=rng.randint(10000, 89999), site=rng.choice(SITES)),
    ])
    return text.upper() if rng.random() < 0.15 else text


def ham(rng):
    text = rng.choice(HAM) + rng.choice(HAM_TAIL)
    if rng.random() < 0.3:
        text = text[0].upper() + text[1:]
    return text


def main():
    rng = random.Random(20231019)
    docs = []
    for i in range(200):
        label = "spam" if rng.random() < 0.35 else "ham"
        docs.append({"id": f"m{i:03d}", "text": spam(rng) if label == "spam" else ham(rng), "label": label})
    out = Path(__file__).resolve().parent / "minispam"
    out.mkdir(exist_ok=True)
    splits = {"train": docs[:120], "valid": docs[120:150], "test": docs[150:]}
    for name, rows in splits.items():
        with open(out / f"{name}.jsonl", "w") as f:
            for r in rows:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")
    with open(out / "classes.json", "w") as f:
        json.dump({"names": ["ham", "spam"], "positive_class": "spam", "prior": None}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
