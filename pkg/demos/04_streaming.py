# %% [markdown]
# # Filtering a live stream of frames
#
# Each frame holds 52 expression weights and 70 landmarks.  Every weight
# and every landmark coordinate is smoothed on its own channel, one frame
# at a time, so output frame k never depends on anything after frame k.

# %%
import io

from facecap.pipeline import (
    SynthSpec,
    benchmark,
    evaluate_run,
    read_stream,
    run_stream,
    synth_stream,
    write_stream,
)

noisy, clean = synth_stream(SynthSpec(wave="pulse", sigma=0.05, frames=600), seed=0)
print(len(noisy), "frames,", noisy[0].channels().size, "channels")

# %% [markdown]
# Streams travel as CSV (or JSONL).  The header declares the channel counts.

# %%
buf = io.StringIO()
write_stream(buf, noisy[:3], "csv", 52, 70)
print(buf.getvalue()[:120], "...")
reader, back = read_stream(io.StringIO(buf.getvalue()), "csv")
print(reader.n_weights, reader.n_landmarks, len(back))

# %% [markdown]
# Filter, then compare against the clean reference.

# %%
filtered, timings = run_stream(noisy)
rep = evaluate_run(noisy, filtered, timings, reference=clean)
print(f"jitter ratio {rep.jitter_ratio:.3f}")
print(f"lag {rep.lag} frame(s)")
print(f"peak retention {rep.peak_retention:.3f}")
print(f"mean {rep.mean_ms:.3f} ms per frame")

# %% [markdown]
# Throughput on a 2000-frame stream.

# %%
res = benchmark(frames=2000, repeats=3)
print(f"{res['frames_per_s']:,.0f} frames/s  (p99 {res['p99_ms']:.3f} ms)")
