from twostream import cli

out = 'build/run'
cli.twostream(
    [
        "--debug",
        "--no-timestamp",
        "gen-data",
        "--out-dir",
        f"{out}/data",
        "--seed",
        "1",
    ],
    standalone_mode=False,
)
cli.twostream(
    [
        "--debug",
        "train",
        "--data",
        f"{out}/data/manifest.json",
        "--out",
        f"{out}/checkpoints",
    ],
    standalone_mode=False,
)
