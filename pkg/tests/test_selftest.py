import pytest
from pydantic import ValidationError

from gaitstrip.selftest import CheckResult, check_losses, check_sampler


def test_check_result_is_frozen():
    result = check_sampler(5)
    assert result == CheckResult(name="sampler", passed=True, detail="draws=5")
    with pytest.raises(ValidationError):
        result.passed = False


def test_losses_check_passes():
    result = check_losses()
    assert result.passed, result.detail
    assert result.name == "losses"
