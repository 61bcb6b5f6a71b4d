import math


def _db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.3f}"


class Message:
    @classmethod
    def eval_table(cls, scores: dict, title: str = "eval"):
        width = max([len(r["id"]) for r in scores["items"]] + [4])
        lines = [f"📊 {title}", f"{'item'.ljust(width)}  {'PSNR':>8}  {'SSIM':>7}"]
        for row in scores["items"]:
            lines.append(f"{row['id'].ljust(width)}  {_db(row['psnr']):>8}  {row['ssim']:>7.4f}")
        lines.append(f"{'mean'.ljust(width)}  {_db(scores['psnr']):>8}  {scores['ssim']:>7.4f}")
        return "\n".join(lines)

    @classmethod
    def run_summary(cls, objective, steps, final_loss, psnr=None, checkpoint_hash=None):
        msg = f"✅ {objective}: {steps} steps, final loss {final_loss:.5f}"
        if psnr is not None:
            msg += f", val PSNR {_db(psnr)} dB"
        if checkpoint_hash:
            msg += f"\n💾 checkpoint {checkpoint_hash[:12]}"
        return msg

    @classmethod
    def probe(cls, report):
        return (f"🔎 step {report.step}: baseline loss {report.baseline_loss:.5f}, "
                f"|g| {report.baseline_grad_norm:.4g}, loss range [{report.loss_min:.5f}, "
                f"{report.loss_max:.5f}], max grad diff {report.max_grad_diff:.4g}")

    @classmethod
    def spectrum(cls, item_id, alpha, fraction):
        return f"〰️ {item_id} (alpha {alpha}): {fraction:.2%} of radial mass in the top quartile"

    @classmethod
    def oracle(cls, report: dict):
        ok = "✅" if report["violations"] == 0 else "‼️"
        msg = (f"{ok} K={report['k']}: {report['violations']}/{report['jensen_trials']} Jensen violations, "
               f"mean |eps| {report['mean_eps_norm']:.4g}")
        curve = report.get("training_distance_curve")
        if curve:
            msg += f"\n📉 |f(x) - mu| {curve[0][1]:.4f} -> {curve[-1][1]:.4f}"
        return msg

    @classmethod
    def comparison(cls, summary: dict):
        lines = ["🏁 objective  seed  PSNR@step  p95 grad diff"]
        for row in summary["runs"]:
            psnr = "-" if row["psnr_at"] is None else _db(row["psnr_at"])
            p95 = "-" if row["probe_p95"] is None else f"{row['probe_p95']:.4g}"
            lines.append(f"{row['objective']:<10} {row['seed']:>5}  {psnr:>9}  {p95:>13}")
        return "\n".join(lines)
