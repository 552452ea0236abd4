"""Caption metrics, judge-based feature metrics and label statistics."""
