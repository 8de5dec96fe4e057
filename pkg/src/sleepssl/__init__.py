"""Self-supervised sleep staging for two-channel wearable EEG.

Library layout:

- ``sigproc``    -- deterministic preprocessing (filter, resample, epoching, z-score)
- ``augment``    -- the two augmentation families and the per-channel sampler
- ``net``        -- epoch/sequence encoders, heads, checkpointing
- ``objectives`` -- the seven pretext objectives and EMA machinery
- ``trainer``    -- pretext and fine-tuning optimization loops
- ``bench``      -- split planners and the three label-efficiency scenarios
- ``datastore``  -- on-disk dataset format and the synthetic EEG generator
- ``report``     -- delimited tables and matplotlib figures
- ``cli``        -- command-line entry points
"""

__version__ = "0.1.0"
