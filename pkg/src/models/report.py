"""
Evaluation report models
"""

import json

from pydantic import BaseModel, Field, model_validator


class CalibrationBin(BaseModel):
    """One equal-width prediction bin"""

    lower: float
    upper: float
    mean_prediction: float | None = None
    empirical_rate: float | None = None
    count: int = Field(default=0, ge=0)


class EvalReport(BaseModel):
    """Prediction quality on one labeled set"""

    auc: float = Field(..., ge=0.0, le=1.0)
    log_loss: float = Field(..., ge=0.0)
    n: int = Field(..., ge=0)
    calibration: list[CalibrationBin] = Field(default_factory=list)
    label: str = "evaluation"

    @model_validator(mode="after")
    def check_bin_counts(self) -> "EvalReport":
        if self.calibration and sum(b.count for b in self.calibration) != self.n:
            raise ValueError("calibration bin counts must sum to n")
        return self

    def to_text(self) -> str:
        """Human-readable report"""

        lines = [
            f"{self.label}",
            f"  n         {self.n}",
            f"  AUC       {self.auc:.6f}",
            f"  log-loss  {self.log_loss:.6f}",
            "  calibration (range, mean prediction, empirical rate, count)",
        ]
        for b in self.calibration:
            if b.count == 0:
                lines.append(f"    [{b.lower:.2f}, {b.upper:.2f})          -          -  0")
            else:
                lines.append(
                    f"    [{b.lower:.2f}, {b.upper:.2f})  {b.mean_prediction:.4f}  {b.empirical_rate:.4f}  {b.count}"
                )
        return "\n".join(lines) + "\n"

    def to_json_lines(self) -> str:
        """One summary line, then one line per calibration bin"""

        summary = {"record": "summary", "label": self.label, "auc": self.auc, "log_loss": self.log_loss, "n": self.n}
        lines = [json.dumps(summary, sort_keys=True)]
        for b in self.calibration:
            lines.append(json.dumps({"record": "calibration", "label": self.label, **b.model_dump()}, sort_keys=True))
        return "\n".join(lines) + "\n"


class AgreementReport(BaseModel):
    """Decision agreement of two prediction sets at one threshold"""

    threshold: float
    agreement: float = Field(..., ge=0.0, le=1.0)
    n: int = Field(..., ge=0)
    auc_a: float | None = None
    auc_b: float | None = None

    def to_text(self) -> str:
        text = f"threshold {self.threshold:g}: agreement {self.agreement:.6f} over {self.n} predictions\n"
        if self.auc_a is not None and self.auc_b is not None:
            text += f"AUC a {self.auc_a:.6f}, AUC b {self.auc_b:.6f}, gap {abs(self.auc_a - self.auc_b):.6f}\n"
        return text
