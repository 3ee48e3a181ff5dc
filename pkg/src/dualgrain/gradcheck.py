"""Gradient plumbing: autograd extraction, finite-difference comparison,
parameter freezing and checksums, and the stop-gradient isolation report."""

import copy
import hashlib

import torch

from .errors import InvariantViolation


def gradient_of(loss_fn, module):
    """Evaluate loss_fn() and return {param name: gradient tensor} for every
    trainable parameter of `module`; frozen parameters are excluded."""
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    out = {}
    for (name, p), g in zip(params, grads):
        out[name] = torch.zeros_like(p) if g is None else g
    return out


def finite_difference_gradients(loss_fn, module, eps=1e-4):
    """Central finite differences of loss_fn() w.r.t. every trainable parameter.

    Mutates parameters in place during probing and restores them; run the
    module in double precision for meaningful comparisons.
    """
    out = {}
    with torch.no_grad():
        for name, p in module.named_parameters():
            if not p.requires_grad:
                continue
            grad = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            out[name] = grad
    return out


def max_relative_gradient_error(loss_fn, module, eps=1e-4, floor=1e-6):
    """Worst-case relative disagreement between autograd and central differences."""
    analytic = gradient_of(loss_fn, module)
    numeric = finite_difference_gradients(loss_fn, module, eps=eps)
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
        worst = max(worst, ((a - n).abs() / denom).max().item())
    return worst


def freeze(module):
    """Detach a module from training: no gradients, no batch-stat updates."""
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def snapshot(module):
    """Frozen deep copy used for teacher / anchor roles."""
    return freeze(copy.deepcopy(module))


def parameter_checksum(module, include_buffers=True):
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        if not include_buffers and "." in name and name.split(".")[-1] in ("running_mean", "running_var", "num_batches_tracked"):
            continue
        h.update(name.encode("utf-8"))
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def leakage_report(loss, module, label):
    """Max |grad| of `loss` over each parameter of `module` (absent graph = 0)."""
    params = [(n, p) for n, p in module.named_parameters()]
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True, retain_graph=True)
    report = {}
    for (name, p), g in zip(params, grads):
        report[name] = 0.0 if g is None else g.abs().max().item()
    return {f"{label}:{k}": v for k, v in report.items()}


def assert_stop_gradient(l_mcls, l_kl, l_ca, ca_modules):
    """Verify fusion and alignment losses leave the class-agnostic branch untouched.

    l_mcls / l_kl must have exactly zero gradient w.r.t. every parameter of the
    modules in `ca_modules`; l_ca must reach at least one of them.  Returns the
    per-parameter leak report; raises InvariantViolation naming the first
    leaking parameter.
    """
    report = {}
    for label, loss in (("mcls", l_mcls), ("kl", l_kl)):
        for mod_name, module in ca_modules.items():
            leaks = leakage_report(loss, module, f"{label}/{mod_name}")
            report.update(leaks)
            for pname, magnitude in leaks.items():
                if magnitude != 0.0:
                    raise InvariantViolation(f"gradient leak into class-agnostic branch: {pname} = {magnitude}")
    ca_total = 0.0
    for mod_name, module in ca_modules.items():
        leaks = leakage_report(l_ca, module, f"ca/{mod_name}")
        report.update(leaks)
        ca_total += sum(leaks.values())
    if ca_total == 0.0:
        raise InvariantViolation("class-agnostic objective produced no gradient at all")
    return report
