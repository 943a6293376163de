import hypothesis

# deterministic property tests: no flaky CI, stable falsifying examples
hypothesis.settings.register_profile(
    "derm", derandomize=True, max_examples=30, deadline=None)
hypothesis.settings.load_profile("derm")
