from zotune.trace import TraceRecord, TrainingTrace


def sample_trace():
    return TrainingTrace(
        records=(
            TraceRecord(step=0, loss=0.6931471805599453, projected_grad=0.25),
            TraceRecord(step=1, loss=0.5, projected_grad=-1.5, dev_accuracy=0.75),
            TraceRecord(step=2, loss=0.25),
        )
    )


class TestTrace:
    def test_len_and_final_loss(self):
        trace = sample_trace()
        assert len(trace) == 3
        assert trace.final_loss() == 0.25

    def test_empty_trace(self):
        trace = TrainingTrace(records=())
        assert len(trace) == 0
        assert trace.final_loss() is None
        assert trace.to_jsonl() == ""

    def test_dev_accuracies_filters_eval_steps(self):
        assert sample_trace().dev_accuracies() == [(1, 0.75)]

    def test_none_fields_omitted_from_jsonl(self):
        lines = sample_trace().to_jsonl().splitlines()
        assert "projected_grad" not in lines[2]
        assert "dev_accuracy" not in lines[0]
        assert "dev_accuracy" in lines[1]

    def test_jsonl_round_trip_exact(self):
        trace = sample_trace()
        again = TrainingTrace.from_jsonl(trace.to_jsonl())
        assert again == trace
        assert again.to_jsonl() == trace.to_jsonl()

    def test_float_bits_survive_round_trip(self):
        trace = TrainingTrace(records=(TraceRecord(step=0, loss=1 / 3, projected_grad=2 / 7),))
        again = TrainingTrace.from_jsonl(trace.to_jsonl())
        assert again.records[0].loss == 1 / 3
        assert again.records[0].projected_grad == 2 / 7

    def test_file_round_trip(self, tmp_path):
        trace = sample_trace()
        path = tmp_path / "trace.jsonl"
        trace.save(path)
        assert TrainingTrace.load(path) == trace

    def test_blank_lines_ignored(self):
        text = sample_trace().to_jsonl() + "\n\n"
        assert TrainingTrace.from_jsonl(text) == sample_trace()
