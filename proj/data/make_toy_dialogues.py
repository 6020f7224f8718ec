#!/usr/bin/env python3
"""Writes data/toy_dialogues.jsonl: 30 short synthetic dialogues in JSON-lines form."""
import json
import random
import sys
from pathlib import Path

TOPICS = ["ordinary_life", "school_life", "culture_and_education", "attitude_and_emotion",
          "relationship", "tourism", "health", "work", "politics", "finance"]

NAMES = ["Anna", "Ben", "Cara", "Dan", "Eva", "Finn", "Gina", "Hugo", "Iris", "Jack",
         "Kate", "Leo", "Mia", "Nick", "Olga", "Paul", "Rosa", "Sam", "Tina", "Umar",
         "Vera", "Will", "Xena", "Yuri", "Zoe", "Alex", "Beth", "Carl", "Dora", "Emil"]
THINGS = ["bike", "exam", "trip", "job", "cat", "garden", "concert", "loan", "vote", "cough",
          "novel", "piano", "flat", "car", "class", "team", "dinner", "ticket", "doctor", "budget",
          "camera", "lecture", "boat", "salary", "party", "museum", "clinic", "meeting", "bank", "map"]
PLACES = ["Paris", "the lake", "the office", "school", "the park", "Rome", "the gym", "home",
          "the market", "the station"]

# (emotion, act, template) turns; {n} name, {t} thing, {p} place.
OPENERS = [
    ("no_emotion", "question", "Hi {n}, how is your {t} going?"),
    ("no_emotion", "question", "{n}, did you see my {t} at {p}?"),
    ("no_emotion", "directive", "{n}, tell me about the {t} please."),
]
REPLIES = [
    ("happiness", "inform", "Great news, my {t} went perfectly at {p}!"),
    ("sadness", "inform", "Sadly the {t} failed again at {p}."),
    ("anger", "inform", "I am furious, someone broke my {t} at {p}!"),
    ("surprise", "question", "Really? A new {t} appeared at {p}?"),
    ("fear", "inform", "I am scared the {t} will go wrong at {p}."),
    ("disgust", "inform", "Yuck, the {t} at {p} smelled awful."),
]
FOLLOW = {
    "happiness": ("happiness", "inform", "Congratulations! You earned that {t}, {n}."),
    "sadness": ("sadness", "commissive", "I am sorry {n}, I will help fix the {t}."),
    "anger": ("anger", "directive", "Call the police about that {t} now, {n}!"),
    "surprise": ("surprise", "inform", "Yes {n}, the {t} surprised everyone."),
    "fear": ("fear", "directive", "Stay calm {n}, check the {t} twice."),
    "disgust": ("disgust", "inform", "Gross, never touch that {t} again, {n}."),
}
CLOSERS = [
    ("no_emotion", "inform", "Thanks {n}, see you at {p} with the {t}."),
    ("happiness", "commissive", "Sure {n}, we will celebrate the {t} at {p}."),
]


def fill(template, name, thing, place):
    return template.format(n=name, t=thing, p=place)


def main(out_path):
    rng = random.Random(20240611)
    lines = []
    for i in range(30):
        name, thing = NAMES[i], THINGS[i]
        place = PLACES[i % len(PLACES)]
        opener = OPENERS[i % len(OPENERS)]
        reply = REPLIES[i % len(REPLIES)]
        turns = [opener, reply, FOLLOW[reply[0]]]
        if rng.random() < 0.7:
            turns.append(CLOSERS[i % len(CLOSERS)])
        if rng.random() < 0.4:
            turns.append(("no_emotion", "inform", "Bye {n}, good luck with the {t}."))
        utts = [{"text": fill(t, name, thing, place), "emotion": e, "act": a} for e, a, t in turns]
        lines.append(json.dumps({"topic": TOPICS[i % len(TOPICS)], "utterances": utts}))
    Path(out_path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).with_name("toy_dialogues.jsonl")))
