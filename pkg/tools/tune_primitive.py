"""Desk tool: roll out the motion primitive and visualize/diagnose the grasp."""
import sys
import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from softchain import dynamics, env as E, geometry, model as M


def render(engine, state, path, title=""):
    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    fk_l, fk_r = engine.fk(state)
    r_box = geometry.quat_to_rot(state.box_quat)
    he = 0.5 * np.array(engine.box.size)
    corners = state.box_x + np.array(
        [(sx*he[0], sy*he[1], sz*he[2]) for sx in (-1,1) for sy in (-1,1) for sz in (-1,1)]) @ r_box.T
    cc, che = engine.chest_box(state.h)
    for ax, (i, j, lx, ly) in zip(axes, [(0, 2, 'x', 'z'), (1, 2, 'y', 'z')]):
        ax.axhline(0, color='k', lw=1)
        for fk, col in ((fk_l, 'tab:blue'), (fk_r, 'tab:red')):
            pts = np.vstack([fk.base_p, fk.body_p])
            ax.plot(pts[:, i], pts[:, j], '-o', color=col, ms=3)
        hull = corners[np.argsort(np.arctan2(corners[:, j].mean()-corners[:, j], corners[:, i].mean()-corners[:, i]))]
        ax.scatter(corners[:, i], corners[:, j], s=8, color='tab:green')
        ax.add_patch(plt.Rectangle((cc[i]-che[i], cc[j]-che[j]), 2*che[i], 2*che[j],
                                   fill=False, color='gray'))
        ax.set_xlabel(lx); ax.set_ylabel(ly); ax.set_aspect('equal')
        ax.set_xlim(-1.2, 1.6); ax.set_ylim(-0.1, 2.6)
    fig.suptitle(title)
    fig.savefig(path, dpi=80)
    plt.close(fig)


def rollout(mdl, box, seed=3, steps=500, snaps=(), tag="run", verbose=True):
    cfg = E.EpisodeConfig(box=box)
    ev = E.GraspEnv(mdl, reward="guided", config=cfg)
    obs = ev.reset(seed)
    outcome = None
    pol = E.MotionPrimitive(mdl)
    for k in range(steps):
        a = pol.action(ev._state.h)
        obs, r, term, trunc, info = ev.step(a)
        if verbose and k % 40 == 0:
            st = ev._state
            fn = sum(max(0.0, float(c.force @ c.normal)) for c in info["contacts"]
                     if "box" in c.bodies and any(b.startswith(("left","right")) for b in c.bodies))
            print(f"k={k:4d} t={st.t:5.1f} phase={info['primitive_phase']:8s} h={st.h:+.2f} "
                  f"box=({st.box_x[0]:+.2f},{st.box_x[1]:+.2f},{st.box_x[2]:+.2f}) "
                  f"tilt={np.degrees(info['tilt']):5.1f} nc={info['n_contacts']:2d} Fn={fn:6.1f}")
        if k in snaps:
            render(ev.engine, ev._state, f"/tmp/{tag}_{k:04d}.png",
                   f"step {k} phase {info['primitive_phase']}")
        if term or trunc:
            outcome = info["outcome"]
            break
    print("outcome:", outcome, "steps:", k + 1)
    return outcome


if __name__ == "__main__":
    mdl = M.default_model()
    box = M.BoxSpec()
    rollout(mdl, box, snaps=(0, 80, 160, 240, 320, 400), tag="base")
