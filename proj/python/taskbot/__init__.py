"""Task-oriented dialog bot: training, evaluation and chat from Python."""

import json

from . import _taskbot
from ._taskbot import ConfigError, ContractError, Error

__all__ = [
    "Bot",
    "ConfigError",
    "ContractError",
    "Error",
    "Server",
    "Session",
    "corpus_checksum",
    "evaluate",
    "gen_synthetic",
    "gradcheck",
    "train",
]


def gen_synthetic(dialogs, entities=200, seed=1, kb_seed=1):
    """Returns (corpus JSONL text, KB as a list of entity dicts)."""
    corpus, kb = _taskbot.gen_synthetic(dialogs, entities, seed, kb_seed)
    return corpus, json.loads(kb)


def corpus_checksum(path):
    return _taskbot.corpus_checksum(str(path))


def train(corpus, kb, out, model=None, training=None):
    """Trains on a JSONL corpus and writes a checkpoint; returns the history."""
    result = _taskbot.train(str(corpus), str(kb), str(out), json.dumps(model or {}), json.dumps(training or {}))
    return json.loads(result)


def evaluate(checkpoint, kb, corpus, mode="free"):
    return json.loads(_taskbot.evaluate(str(checkpoint), str(kb), str(corpus), mode))


def gradcheck(variant="base", seed=1):
    return json.loads(_taskbot.gradcheck(variant, seed))


class Bot:
    def __init__(self, checkpoint, kb):
        self._bot = _taskbot.Bot(str(checkpoint), str(kb))

    def meta(self):
        return json.loads(self._bot.meta())

    def session(self):
        return Session(self)


class Session:
    def __init__(self, bot):
        self._session = _taskbot.Session(bot._bot)

    def step(self, text):
        return json.loads(self._session.step(text))

    def state(self):
        return json.loads(self._session.state())

    def transcript(self):
        return self._session.transcript()


class Server:
    """HTTP chat API on a background thread; port 0 picks a free port."""

    def __init__(self, bot, host="127.0.0.1", port=0):
        self._server = _taskbot.Server(bot._bot, host, port)

    @property
    def port(self):
        return self._server.port

    def stop(self):
        self._server.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
