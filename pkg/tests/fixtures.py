"""Case-study reply fixtures for the four-step evolution parser.

Two worked cases (a string-reversal task and a polynomial-expansion task),
each evolved at three budgets. The reply texts deliberately vary subset
rendering (python list, JSON array, comma line), marker casing and the
Final/Finally wording, all of which the parser must tolerate.
"""

STRING_REVERSAL_ORIGINAL = "Reverse the string given in the input"

STRING_REVERSAL_CASES = [
    {
        "budget": 1,
        "subset": ["basic math calculations"],
        "final": "Reverse the string given in the input and multiply its length by 2.",
    },
    {
        "budget": 3,
        "subset": ["form processing", "letters and numbers", "basic math calculations"],
        "final": (
            "Reverse the string given in the input, ensuring it contains both letters and "
            "numbers. Process the form to validate the input, and if the string length is even, "
            "append the sum of the digits in the string to the reversed output."
        ),
    },
    {
        "budget": 5,
        "subset": [
            "form processing",
            "letters and numbers",
            "coding example",
            "basic math calculations",
            "third character",
        ],
        "final": (
            "Reverse the string given in the input, but first, process the input form to ensure "
            "it contains both letters and numbers. For each letter, convert it to its "
            "corresponding ASCII value, and for each number, double it. Then, calculate the "
            "position of the third character in the modified string and append this position to "
            "the end of the reversed string. Provide a coding example to demonstrate the process."
        ),
    },
]

POLYNOMIAL_ORIGINAL = "Expand $(x-2)(x+2)(x^2+4)$."

POLYNOMIAL_CASES = [
    {
        "budget": 1,
        "subset": ["conditions on variables"],
        "final": "Expand $(x-2)(x+2)(x^2+4)$, given that $x$ is an integer such that $x > 0$.",
    },
    {
        "budget": 3,
        "subset": ["conditions on variables", "sequential operations", "polygon perimeter"],
        "final": (
            "Expand $(x-2)(x+2)(x^2+4)$ for $x > 0$, then use the result to find the perimeter "
            "of a square whose side length is the square root of the expanded expression "
            "evaluated at $x = 3$."
        ),
    },
    {
        "budget": 5,
        "subset": [
            "conditions on variables",
            "factor",
            "evaluating trigonometric functions",
            "sequential operations",
            "integer sum problem",
        ],
        "final": (
            "Expand $(x-2)(x+2)(x^2+4)$, where $x$ is an integer such that $-3 \\leq x \\leq 3$. "
            "Factor the expanded polynomial, if possible, and then evaluate "
            "$\\sin(\\pi \\cdot \\text{expanded polynomial})$. Find the sum of all integer "
            "values of $x$ for which the result is an integer."
        ),
    },
]


def _python_list(subset):
    return "[" + ", ".join(f"'{tag}'" for tag in subset) + "]"


def _json_list(subset):
    import json

    return json.dumps(list(subset))


def render_case_reply(case: dict, style: str) -> str:
    """Render one case as a model reply in one of the tolerated shapes."""
    subset, final = case["subset"], case["final"]
    plan = f"Weave the {len(subset)} selected tags into the task without changing its intent."
    if style == "python_list_finally":
        return (
            f"Step 1 #Tag subset#: {_python_list(subset)}\n"
            f"Step 2 #Plan#: {plan}\n"
            f"Step 3 #Rewritten Instruction#: {final}\n"
            f"Step 4 #Finally Rewritten Instruction#: {final}\n"
        )
    if style == "json_list_markdown":
        return (
            f"**Step 1 #Tag subset#:** {_json_list(subset)}\n\n"
            f"**Step 2 #Plan#:** {plan}\n\n"
            f"**Step 3 #Rewritten Instruction#:** {final}\n\n"
            f"**Step 4 #Finally Rewritten Instruction#:** {final}\n"
        )
    if style == "comma_line_final":
        return (
            f"Step 1 #Tag subset#:\n{', '.join(subset)}\n"
            f"Step 2 #Plan#:\n{plan}\n"
            f"Step 3 #Rewritten Instruction#:\n{final}\n"
            f"Step 4 #Final Rewritten Instruction#:\n{final}\n"
        )
    if style == "lowercase_markers":
        return (
            f"step 1 #tag subset#: {_python_list(subset)}\n"
            f"step 2 #plan#: {plan}\n"
            f"step 3 #rewritten instruction#: {final}\n"
            f"step 4 #finally rewritten instruction#: {final}\n"
        )
    raise ValueError(f"unknown style {style!r}")


# (case, original, rendering style) for all six rounds across both tasks.
ALL_CASE_FIXTURES = [
    (STRING_REVERSAL_CASES[0], STRING_REVERSAL_ORIGINAL, "python_list_finally"),
    (STRING_REVERSAL_CASES[1], STRING_REVERSAL_ORIGINAL, "json_list_markdown"),
    (STRING_REVERSAL_CASES[2], STRING_REVERSAL_ORIGINAL, "comma_line_final"),
    (POLYNOMIAL_CASES[0], POLYNOMIAL_ORIGINAL, "lowercase_markers"),
    (POLYNOMIAL_CASES[1], POLYNOMIAL_ORIGINAL, "json_list_markdown"),
    (POLYNOMIAL_CASES[2], POLYNOMIAL_ORIGINAL, "python_list_finally"),
]
