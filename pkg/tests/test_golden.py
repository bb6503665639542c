"""Seed-42 forward passes against frozen reference-oracle outputs."""

import json
from pathlib import Path

import numpy as np
import pytest

from dreamprvr import diffusion as D
from dreamprvr import retrieval as Rv
from dreamprvr import tensor as T
from dreamprvr import text as X
from dreamprvr import video as V
from dreamprvr.tensor import Tensor

from fixtures.make_golden import HEADS, inputs

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "golden.json").read_text())
TOL = 1e-10


@pytest.fixture(scope="module")
def inp():
    return inputs()


def close(actual, key):
    np.testing.assert_allclose(np.asarray(actual), np.asarray(GOLDEN[key]), rtol=0, atol=TOL)


def test_matmul_table(inp):
    close(T.matmul(Tensor(inp["mat_a"]), Tensor(inp["mat_b"])).data, "matmul")


def test_encode_query(inp):
    tokens = X.QueryTokens(inp["query_tokens"], "v", "q")
    close(X.encode_query(tokens, inp["text"], HEADS).q.data, "encode_query")


def test_pvs_distribution(inp):
    dist = D.pvs_distribution(Tensor(inp["V_v"]), inp["pvs"])
    close(dist.mu_v.data, "pvs_mu")
    close(dist.sigma_v.data, "pvs_sigma")


def test_condition_and_dre(inp):
    c = D.make_condition(Tensor(inp["V_v"]), inp["cond"])
    close(c.data, "condition")
    close(D.dre_predict(Tensor(inp["q_t"]), 1, c, inp["dre"]).data, "dre_t1")


def test_reverse_step(inp):
    c = D.make_condition(Tensor(inp["V_v"]), inp["cond"])
    sched = D.build_schedule(2, 1e-4, 0.05)
    out = D.reverse_step(Tensor(inp["q_t"]), 2, c, inp["z"], sched, inp["dre"])
    close(out.data, "reverse_step_t2")


def test_encode_features(inp):
    close(V.encode_features(inp["raw"], inp["encoder"], HEADS).data, "encode_features")


def test_rab_block(inp):
    close(V.rab_block(Tensor(inp["V_v"]), inp["r0"], 1.0, inp["rab"], HEADS).data, "rab_var1")


def test_dreamprvr_block_three_blocks(inp):
    agg = {"logits": Tensor(inp["logits3"])}
    out = V.dreamprvr_block(Tensor(inp["V_v"]), inp["r0"], inp["stack3"], V.block_variances(3), HEADS, agg)
    close(out.data, "dreamprvr_block3")


def test_dual_branch(inp):
    emb = V.dual_branch(inp["raw"], inp["r0"], inp["branches"], HEADS, m_clips=3)
    close(emb.V_f.data, "dual_V_f")
    close(emb.V_c.data, "dual_V_c")


def test_projection_csv(inp):
    rows = Rv.export_projection(list(inp["projection"]), [f"p{i}" for i in range(6)])
    assert Rv.projection_csv(rows) == GOLDEN["projection_csv"]
