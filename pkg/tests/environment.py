import logging

import pytest

import darkproxy
from darkproxy.__main__ import main


@pytest.mark.parametrize(
    "env,level",
    [
        ({}, logging.NOTSET),
        ({"PNNP_LOG": "debug"}, logging.DEBUG),
        ({"PNNP_LOG": "info"}, logging.INFO),
        ({"PNNP_LOG": "1"}, 1),
        ({"PNNP_LOG": "on"}, logging.DEBUG),
        ({"PNNP_LOG": "off"}, logging.WARNING),
        ({"PNNP_LOG": "chatty"}, logging.NOTSET),
        ({"DARKPROXY_LOG_LEVEL": "error", "PNNP_LOG": "debug"}, logging.ERROR),
        ({"DARKPROXY_DEBUG": "yes", "PNNP_LOG": "error"}, logging.DEBUG),
    ],
)
def test_log_level_from_env(monkeypatch, env, level):
    for var, value in env.items():
        monkeypatch.setenv(var, value)
    assert darkproxy.log_level_from_env() == level


def test_debug_messages_reach_stderr(monkeypatch, capsys):
    logger = logging.getLogger("darkproxy")
    monkeypatch.setattr(logger, "handlers", [])
    monkeypatch.setenv("PNNP_LOG", "debug")
    saved = logger.level
    logger.setLevel(darkproxy.log_level_from_env())
    try:
        assert main(["--info"]) == 0
        logging.getLogger("darkproxy.test").debug("debug output is visible")
    finally:
        logger.setLevel(saved)
    assert "debug output is visible" in capsys.readouterr().err
