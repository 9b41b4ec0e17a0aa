import json

import numpy as np
import pytest

from palstm.model import ModelConfig
from palstm.persistence import ModelFormatError, from_json, load_model, save_model, to_json
from palstm.training import TrainConfig, fit_arrays


@pytest.fixture(scope="module")
def fitted(small_windows):
    X = np.stack([w.values for w in small_windows[:10]])
    m = np.array([w.mileage for w in small_windows[:10]])
    return fit_arrays(X, m, ModelConfig(T=8, D=4, K=1, hidden_size=3), TrainConfig(epochs=2, batch_size=4)), X, m


class TestRoundTrip:
    def test_bit_exact(self, fitted, tmp_path):
        result, X, m = fitted
        path = tmp_path / "model.json"
        save_model(result, path)
        loaded = load_model(path)
        assert all(np.array_equal(result.params[k], loaded.params[k]) for k in result.params)
        assert loaded.threshold.lam == result.threshold.lam
        assert loaded.model_config == result.model_config
        assert loaded.spec == result.spec
        np.testing.assert_array_equal(loaded.score(X, m), result.score(X, m))

    def test_serialization_is_stable(self, fitted):
        result, _, _ = fitted
        assert to_json(result) == to_json(from_json(to_json(result)))


class TestErrors:
    def test_not_json(self):
        with pytest.raises(ModelFormatError):
            from_json("{nope")

    def test_wrong_format(self):
        with pytest.raises(ModelFormatError):
            from_json(json.dumps({"format": "other", "version": 1}))

    def test_wrong_version(self, fitted):
        doc = json.loads(to_json(fitted[0]))
        doc["version"] = 99
        with pytest.raises(ModelFormatError, match="version"):
            from_json(json.dumps(doc))

    def test_missing_section(self, fitted):
        doc = json.loads(to_json(fitted[0]))
        del doc["stats"]
        with pytest.raises(ModelFormatError):
            from_json(json.dumps(doc))
