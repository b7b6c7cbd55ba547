#!/usr/bin/env python3
"""Turn prose into rule-language text with the offline template backend.

Shows the three behaviors that matter at the ingestion boundary: a clean
first-try formalization, a merge conflict against the bundled corpus, and
the bounded retry loop feeding diagnostics back to the backend.

    python3 demos/formalize_prose.py
"""

from __future__ import annotations

from loophound import corpus_path
from loophound.dsl import parse_ruleset
from loophound.formalizer import (
    FormalizationRequest,
    TemplateBackend,
    formalize,
    validate_candidate,
)


class FixesItselfBackend:
    """Returns broken text first, then defers to the template backend."""

    def __init__(self) -> None:
        self.template = TemplateBackend()

    def generate(self, request, prior_diagnostics):
        if not prior_diagnostics:
            return 'reduction "half-baked" kind exemption {'
        print("  backend saw diagnostics:")
        for diagnostic in prior_diagnostics:
            print(f"    {diagnostic}")
        return self.template.generate(request, prior_diagnostics)


def main() -> None:
    corpus = parse_ruleset(corpus_path("table1.lhl").read_text()).document
    backend = TemplateBackend()

    print("1. initial state from prose")
    request = FormalizationRequest(
        "initial_state", "company holdco in usa owning patent1 and patent2"
    )
    result = formalize(request, backend)
    print(f"  valid={result.valid} attempts={result.attempts}")
    print(f"  {result.dsl_text}")

    print("\n2. new reduction, merged against the bundled corpus")
    request = FormalizationRequest(
        "reduction_rule", "rate 0.4 for royalties from germany to ireland"
    )
    result = formalize(request, backend, ruleset=corpus)
    print(f"  valid={result.valid} attempts={result.attempts}")
    print(result.dsl_text)

    print("\n3. a duplicate legal reference is rejected at merge time")
    clash = (
        'reduction "2003/49/EC" kind exemption {\n'
        "  when: based(Self, ireland);\n"
        "  new_rate: 0.5 * Rate;\n"
        "}\n"
    )
    for diagnostic in validate_candidate(clash, "reduction_rule", ruleset=corpus):
        print(f"  {diagnostic}")

    print("\n4. retry loop: broken candidate, diagnostics fed back, then fixed")
    result = formalize(
        FormalizationRequest(
            "reduction_rule", "rate 0.2 for royalties from usa to ireland"
        ),
        FixesItselfBackend(),
    )
    print(f"  valid={result.valid} attempts={result.attempts}")


if __name__ == "__main__":
    main()
