"""Independent loop-based references used to check the vectorized operators.

Everything here is plain numpy with explicit per-node / per-edge Python loops
and must stay independent of hetscene's autodiff path.
"""

import numpy as np


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def edge_gat_oracle(theta_s, theta_n, theta_e, attn, edges, n_dst,
                    src_feats, dst_feats, edge_feats, slope=0.2):
    """Per-edge loop transcription of the relation-wise attention update.

    theta_n/theta_e/attn are per-head lists of arrays (theta_e entries may be
    None); attn vectors are flat.  Returns [n_dst x d_out].
    """
    num_heads = len(theta_n)
    d_head = theta_n[0].shape[0]
    out = np.zeros((n_dst, theta_s.shape[0]), dtype=dst_feats.dtype)
    for i in range(n_dst):
        out[i] = theta_s @ dst_feats[i]
        incoming = [(int(e[0]), row) for row, e in enumerate(edges) if e[1] == i]
        head_vecs = []
        for k in range(num_heads):
            if not incoming:
                head_vecs.append(np.zeros(d_head, dtype=dst_feats.dtype))
                continue
            logits = []
            msgs = []
            for j, row in incoming:
                zn_i = theta_n[k] @ dst_feats[i]
                zn_j = theta_n[k] @ src_feats[j]
                if theta_e[k] is not None:
                    ze = theta_e[k] @ edge_feats[row]
                    z = np.concatenate([zn_i, zn_j, ze])
                    msgs.append(zn_j + ze)
                else:
                    z = np.concatenate([zn_i, zn_j])
                    msgs.append(zn_j)
                logits.append(leaky(float(attn[k] @ z), slope))
            logits = np.array(logits)
            ex = np.exp(logits - logits.max())
            alpha = ex / ex.sum()
            acc = np.zeros(d_head, dtype=dst_feats.dtype)
            for a, m in zip(alpha, msgs):
                acc += a * m
            head_vecs.append(acc)
        out[i] += np.concatenate(head_vecs)
    return out


def edge_gat_attention_oracle(theta_n, theta_e, attn, edges, n_dst,
                              src_feats, dst_feats, edge_feats, slope=0.2):
    """Attention coefficients [E x K] by explicit per-destination softmax."""
    num_heads = len(theta_n)
    coeffs = np.zeros((len(edges), num_heads), dtype=dst_feats.dtype)
    for i in range(n_dst):
        rows = [row for row, e in enumerate(edges) if e[1] == i]
        if not rows:
            continue
        for k in range(num_heads):
            logits = []
            for row in rows:
                j = int(edges[row][0])
                zn_i = theta_n[k] @ dst_feats[i]
                zn_j = theta_n[k] @ src_feats[j]
                parts = [zn_i, zn_j]
                if theta_e[k] is not None:
                    parts.append(theta_e[k] @ edge_feats[row])
                logits.append(leaky(float(attn[k] @ np.concatenate(parts)), slope))
            logits = np.array(logits)
            ex = np.exp(logits - logits.max())
            alpha = ex / ex.sum()
            for a, row in zip(alpha, rows):
                coeffs[row, k] = a
    return coeffs


def het_layer_oracle(relations, graph_edges, n_dst, feats, edge_feats):
    """Sum of per-relation oracle outputs, clamped at zero.

    ``relations`` maps name -> (params dict with theta_s/theta_n/theta_e/attn,
    src type, dst type).
    """
    total = None
    for name, (p, src_t, dst_t) in relations.items():
        out = edge_gat_oracle(p["theta_s"], p["theta_n"], p["theta_e"], p["attn"],
                              graph_edges[name], n_dst,
                              feats[src_t], feats[dst_t],
                              edge_feats.get(name))
        total = out if total is None else total + out
    return np.maximum(total, 0.0)


def params_to_arrays(p):
    """Extract plain-array copies from an EdgeGatParams for oracle use."""
    return {
        "theta_s": p.theta_s.data.copy(),
        "theta_n": [t.data.copy() for t in p.theta_n],
        "theta_e": [None if t is None else t.data.copy() for t in p.theta_e],
        "attn": [t.data.ravel().copy() for t in p.attn],
    }
